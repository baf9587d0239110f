//! Closed-loop simulation of the reference model, the followers and every
//! adaptive law as one flat ODE.

use std::ops::Range;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::controller::{
    agent_control, agent_rates, AgentController, ControlError, GainInit, InputMode, NeuralApprox,
};
use crate::matching::{coupling_matching, feedback_matching, solve_lyapunov, LyapunovCertificate, MatchingError};
use crate::ode::{euler_step, rk4_step, Workspace};
use crate::plant::{agent_derivative_into, reference_derivative_into};
use crate::scenario::{Method, ScenarioConfig};
use crate::topology::{TopologyError, LEADER};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("simulation diverged at t = {t:.4} s")]
    Divergence { t: f64 },
    #[error("matching oracle unavailable: {0}")]
    MissingOracle(MatchingError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutEntry {
    pub label: String,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct AgentSlots {
    state: Range<usize>,
    params: Range<usize>,
}

/// Index map of the augmented state: `x_0`, then for each follower its
/// state followed by its adaptive parameters in
/// [`AgentController::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    n: usize,
    agents: Vec<AgentSlots>,
    entries: Vec<LayoutEntry>,
    len: usize,
}

impl StateLayout {
    pub fn new(controllers: &[AgentController], n: usize) -> Self {
        let mut entries = vec![LayoutEntry {
            label: "x[0]".into(),
            range: 0..n,
        }];
        let mut agents = Vec::with_capacity(controllers.len());
        let mut at = n;
        let push = |entries: &mut Vec<LayoutEntry>, at: &mut usize, label: String, len: usize| {
            entries.push(LayoutEntry {
                label,
                range: *at..*at + len,
            });
            *at += len;
        };
        for c in controllers {
            let i = c.id;
            let state = at..at + n;
            push(&mut entries, &mut at, format!("x[{i}]"), n);
            let start = at;
            if c.leader.is_some() {
                push(&mut entries, &mut at, format!("k_m[{i}]"), n);
                push(&mut entries, &mut at, format!("k_r[{i}]"), 1);
            }
            let coupling = match c.mode {
                InputMode::Communicated => "k_r",
                InputMode::Estimated => "u_hat",
            };
            for g in &c.neighbors {
                push(&mut entries, &mut at, format!("k_m[{i},{}]", g.id), n);
                push(&mut entries, &mut at, format!("{coupling}[{i},{}]", g.id), 1);
            }
            push(&mut entries, &mut at, format!("k_mi[{i}]"), n);
            push(&mut entries, &mut at, format!("theta[{i}]"), c.nn.theta.len());
            push(&mut entries, &mut at, format!("W[{i}]"), c.nn.w.len());
            agents.push(AgentSlots {
                state,
                params: start..at,
            });
        }
        Self {
            n,
            agents,
            entries,
            len: at,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn find(&self, label: &str) -> Option<Range<usize>> {
        self.entries.iter().find(|e| e.label == label).map(|e| e.range.clone())
    }

    /// State slot of node `i` (`0` is the reference).
    pub fn state(&self, i: usize) -> Range<usize> {
        if i == LEADER {
            0..self.n
        } else {
            self.agents[i - 1].state.clone()
        }
    }

    pub fn params(&self, i: usize) -> Range<usize> {
        self.agents[i - 1].params.clone()
    }

    pub fn pack(&self, reference: &[f64], states: &[Vec<f64>], controllers: &[AgentController]) -> Vec<f64> {
        let mut y = vec![0.0; self.len];
        y[self.state(LEADER)].copy_from_slice(reference);
        for (k, c) in controllers.iter().enumerate() {
            y[self.state(k + 1)].copy_from_slice(&states[k]);
            for (slot, v) in y[self.params(k + 1)].iter_mut().zip(c.params()) {
                *slot = *v;
            }
        }
        y
    }

    /// Copies adaptive parameters from `y` into controllers of matching shape.
    pub fn load(&self, y: &[f64], controllers: &mut [AgentController]) {
        for (k, c) in controllers.iter_mut().enumerate() {
            for (p, v) in c.params_mut().zip(&y[self.params(k + 1)]) {
                *p = *v;
            }
        }
    }

    /// Inverse of [`StateLayout::pack`]; `template` supplies the shapes.
    pub fn unpack(
        &self,
        y: &[f64],
        template: &[AgentController],
    ) -> (Vec<f64>, Vec<Vec<f64>>, Vec<AgentController>) {
        let mut controllers = template.to_vec();
        self.load(y, &mut controllers);
        let states = (1..=template.len()).map(|i| y[self.state(i)].to_vec()).collect();
        (y[self.state(LEADER)].to_vec(), states, controllers)
    }

    pub fn node_states<'a>(&self, y: &'a [f64]) -> Vec<&'a [f64]> {
        (0..=self.agents.len()).map(|i| &y[self.state(i)]).collect()
    }
}

/// Ideal gains of one follower, from the matching oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOracle {
    /// Feedback gains `(k*_mi, k*_ri)` against the reference.
    pub feedback: (Vec<f64>, f64),
    /// `(j, k*_mij, k*_rij)` for each follower neighbor `j`.
    pub neighbors: Vec<(usize, Vec<f64>, f64)>,
}

pub fn oracle_gains(config: &ScenarioConfig) -> Result<Vec<AgentOracle>, MatchingError> {
    let t = &config.topology;
    (1..=config.n_agents())
        .map(|i| {
            let plant = &config.agents[i - 1].plant;
            let fb = feedback_matching(&config.reference, plant)?;
            let neighbors = t
                .follower_neighbors(i)
                .expect("validated topology")
                .into_iter()
                .map(|j| {
                    // i replicates j: A_j = A_i + b_i kᵀ, b_j = b_i k_r.
                    let g = coupling_matching(&config.agents[j - 1].plant, plant)?;
                    Ok((j, g.k_m_star.as_slice().to_vec(), g.k_r_star))
                })
                .collect::<Result<_, MatchingError>>()?;
            Ok(AgentOracle {
                feedback: (fb.k_m_star.as_slice().to_vec(), fb.k_r_star),
                neighbors,
            })
        })
        .collect()
}

/// Recorded history of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    /// Reference value `r(t)` per sample.
    pub r: Vec<f64>,
    /// `x_0` per sample.
    pub reference: Vec<Vec<f64>>,
    /// `[sample][agent]` state.
    pub states: Vec<Vec<Vec<f64>>>,
    /// `[sample][agent]` control.
    pub controls: Vec<Vec<f64>>,
    /// Full augmented state per sample (gains and weights included).
    pub augmented: Vec<Vec<f64>>,
    /// `[sample][agent]` `‖x_i - x_0‖`.
    pub ref_errors: Vec<Vec<f64>>,
    /// Graph edges `[j, i]`, matching `edge_errors` columns.
    pub edges: Vec<[usize; 2]>,
    /// `[sample][edge]` `‖x_i - x_j‖`.
    pub edge_errors: Vec<Vec<f64>>,
    /// Empirical Lyapunov function per sample, when the oracle exists.
    pub lyapunov: Option<Vec<f64>>,
    pub layout: StateLayout,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    /// Max over agents of `‖x_i - x_0‖` at sample `k`.
    pub fn max_ref_error(&self, k: usize) -> f64 {
        self.ref_errors[k].iter().copied().fold(0.0, f64::max)
    }
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    norm(a.iter().zip(b).map(|(x, y)| x - y))
}

/// A validated scenario ready to integrate.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: ScenarioConfig,
    layout: StateLayout,
    order: Vec<usize>,
    cert: LyapunovCertificate,
    p_b0: Vec<f64>,
    p_b: Vec<Vec<f64>>,
    template: Vec<AgentController>,
}

impl Simulator {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.topology.validate()?;
        let order = config.topology.evaluation_order()?;
        let cert = solve_lyapunov(&config.reference.a, &config.q_matrix())?;
        let p_b0 = (&cert.p * &config.reference.b).as_slice().to_vec();
        let p_b = config
            .agents
            .iter()
            .map(|a| (&cert.p * &a.plant.b).as_slice().to_vec())
            .collect();
        let n = config.state_dim();
        let settings = &config.controller;
        let template = config
            .agents
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let nn = NeuralApprox::zeros(n, settings.hidden, settings.slope, settings.bias_vector());
                AgentController::new(k + 1, &config.topology, n, settings, a.sign_kr, a.mode, nn)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let layout = StateLayout::new(&template, n);
        Ok(Self {
            config,
            layout,
            order,
            cert,
            p_b0,
            p_b,
            template,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn certificate(&self) -> &LyapunovCertificate {
        &self.cert
    }

    pub fn template(&self) -> &[AgentController] {
        &self.template
    }

    /// Initial controllers: network weights drawn uniformly from
    /// `[-init_range, init_range]` with the configured seed, gains zero or
    /// ideal.
    pub fn initial_controllers(&self) -> Result<Vec<AgentController>, SimError> {
        let s = &self.config.controller;
        let n = self.config.state_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let mut controllers = self.template.clone();
        for c in controllers.iter_mut() {
            c.nn = NeuralApprox::random(n, s.hidden, s.slope, s.bias_vector(), s.init_range, &mut rng);
        }
        if s.gain_init == GainInit::Ideal {
            let oracle = oracle_gains(&self.config)?;
            for (c, o) in controllers.iter_mut().zip(&oracle) {
                if let Some(l) = c.leader.as_mut() {
                    l.k_m = o.feedback.0.clone();
                    l.k_r = o.feedback.1;
                }
                c.k_mi = o.feedback.0.clone();
                for (g, (_, k_mij, k_rij)) in c.neighbors.iter_mut().zip(&o.neighbors) {
                    g.k_mij = k_mij.clone();
                    g.coupling = *k_rij;
                }
            }
            // Estimates start at k*_rij u_j(0), filled in evaluation order.
            let x0 = self.initial_states();
            let states: Vec<&[f64]> = std::iter::once(self.config.reference.x0.as_slice())
                .chain(x0.iter().map(|x| x.as_slice()))
                .collect();
            let r = self.config.reference.r.at(0.0);
            let mut controls = vec![None; self.config.n_agents() + 1];
            for &i in &self.order {
                let c = &mut controllers[i - 1];
                if c.mode == InputMode::Estimated {
                    for g in c.neighbors.iter_mut() {
                        g.coupling *= controls[g.id].expect("neighbor evaluated first");
                    }
                }
                controls[i] = Some(agent_control(c, &self.config.topology, &states, &controls, r)?);
            }
        }
        Ok(controllers)
    }

    fn initial_states(&self) -> Vec<Vec<f64>> {
        self.config
            .agents
            .iter()
            .map(|a| a.plant.x0.as_slice().to_vec())
            .collect()
    }

    pub fn initial_state(&self) -> Result<Vec<f64>, SimError> {
        let controllers = self.initial_controllers()?;
        Ok(self.layout.pack(
            self.config.reference.x0.as_slice(),
            &self.initial_states(),
            &controllers,
        ))
    }

    /// Controls `u_1..u_N` at `(t, y)`, computed in evaluation order.
    pub fn controls_with(&self, t: f64, y: &[f64], scratch: &mut [AgentController]) -> Result<Vec<f64>, SimError> {
        let n_agents = self.config.n_agents();
        if self.config.controller.open_loop {
            return Ok(vec![0.0; n_agents]);
        }
        self.layout.load(y, scratch);
        let states = self.layout.node_states(y);
        let r = self.config.reference.r.at(t);
        let mut controls = vec![None; n_agents + 1];
        for &i in &self.order {
            controls[i] = Some(agent_control(&scratch[i - 1], &self.config.topology, &states, &controls, r)?);
        }
        Ok(controls.into_iter().skip(1).map(|u| u.expect("every agent evaluated")).collect())
    }

    pub fn controls(&self, t: f64, y: &[f64]) -> Result<Vec<f64>, SimError> {
        self.controls_with(t, y, &mut self.template.clone())
    }

    /// Right-hand side of the coupled system.
    pub fn derivative(
        &self,
        t: f64,
        y: &[f64],
        dy: &mut [f64],
        scratch: &mut [AgentController],
    ) -> Result<(), SimError> {
        let cfg = &self.config;
        let r = cfg.reference.r.at(t);
        let u = self.controls_with(t, y, scratch)?;
        let states = self.layout.node_states(y);
        let inputs: Vec<f64> = std::iter::once(r).chain(u.iter().copied()).collect();
        reference_derivative_into(&cfg.reference, states[LEADER], r, &mut dy[self.layout.state(LEADER)]);
        for (k, agent) in cfg.agents.iter().enumerate() {
            let i = k + 1;
            agent_derivative_into(&agent.plant, states[i], u[k], &mut dy[self.layout.state(i)]);
            let params = self.layout.params(i);
            if cfg.controller.open_loop {
                dy[params].fill(0.0);
                continue;
            }
            let rates = agent_rates(
                &scratch[k],
                &cfg.topology,
                &states,
                &inputs,
                r,
                &self.p_b0,
                &self.p_b[k],
                cfg.controller.nn_error,
                cfg.controller.adapt_nn,
            )?;
            for (slot, v) in dy[params].iter_mut().zip(rates.values()) {
                *slot = v;
            }
        }
        Ok(())
    }

    fn check(&self, y: &[f64], t: f64) -> Result<(), SimError> {
        let finite = y.iter().all(|v| v.is_finite());
        let limit = self.config.diagnostics.divergence_limit;
        let bounded = (1..=self.config.n_agents()).all(|i| norm(y[self.layout.state(i)].iter().copied()) <= limit);
        if finite && bounded {
            Ok(())
        } else {
            Err(SimError::Divergence { t })
        }
    }

    fn advance(
        &self,
        y: &mut [f64],
        t: f64,
        dt: f64,
        ws: &mut Workspace,
        scratch: &mut [AgentController],
    ) -> Result<(), SimError> {
        let f = |t: f64, y: &[f64], dy: &mut [f64]| self.derivative(t, y, dy, scratch);
        match self.config.integration.method {
            Method::Rk4 => rk4_step(y, t, dt, ws, f)?,
            Method::Euler => euler_step(y, t, dt, ws, f)?,
        }
        self.check(y, t + dt)
    }

    /// One integration step from `(t, y)`.
    pub fn step(&self, y: &[f64], t: f64, dt: f64) -> Result<Vec<f64>, SimError> {
        self.check(y, t)?;
        let mut next = y.to_vec();
        self.advance(&mut next, t, dt, &mut Workspace::new(y.len()), &mut self.template.clone())?;
        Ok(next)
    }

    /// Final augmented state after `steps` steps, without recording.
    pub fn integrate(&self, steps: usize, dt: f64) -> Result<Vec<f64>, SimError> {
        let mut y = self.initial_state()?;
        let mut ws = Workspace::new(y.len());
        let mut scratch = self.template.clone();
        for k in 0..steps {
            self.advance(&mut y, k as f64 * dt, dt, &mut ws, &mut scratch)?;
        }
        Ok(y)
    }

    pub fn run(&self) -> Result<SimulationTrace, SimError> {
        match self.run_partial() {
            (trace, None) => Ok(trace),
            (_, Some(e)) => Err(e),
        }
    }

    /// Like [`Simulator::run`], but keeps the samples recorded before a
    /// failure and returns them along with the error.
    pub fn run_partial(&self) -> (SimulationTrace, Option<SimError>) {
        let mut trace = self.empty_trace();
        let err = self.integrate_recorded(&mut trace).err();
        if !trace.is_empty() {
            trace.lyapunov = oracle_gains(&self.config)
                .ok()
                .map(|oracle| self.lyapunov_series(&trace, &oracle));
        }
        (trace, err)
    }

    fn integrate_recorded(&self, trace: &mut SimulationTrace) -> Result<(), SimError> {
        let dt = self.config.integration.dt;
        let steps = self.config.integration.steps();
        let stride = self.config.diagnostics.record_stride;
        let mut y = self.initial_state()?;
        self.check(&y, 0.0)?;
        let mut ws = Workspace::new(y.len());
        let mut scratch = self.template.clone();
        self.record(trace, 0.0, &y, &mut scratch)?;
        for k in 0..steps {
            self.advance(&mut y, k as f64 * dt, dt, &mut ws, &mut scratch)?;
            let done = k + 1;
            if done % stride == 0 || done == steps {
                self.record(trace, done as f64 * dt, &y, &mut scratch)?;
            }
        }
        Ok(())
    }

    fn empty_trace(&self) -> SimulationTrace {
        SimulationTrace {
            times: Vec::new(),
            r: Vec::new(),
            reference: Vec::new(),
            states: Vec::new(),
            controls: Vec::new(),
            augmented: Vec::new(),
            ref_errors: Vec::new(),
            edges: self.config.topology.edges(),
            edge_errors: Vec::new(),
            lyapunov: None,
            layout: self.layout.clone(),
        }
    }

    fn record(
        &self,
        trace: &mut SimulationTrace,
        t: f64,
        y: &[f64],
        scratch: &mut [AgentController],
    ) -> Result<(), SimError> {
        let u = self.controls_with(t, y, scratch)?;
        let nodes = self.layout.node_states(y);
        trace.times.push(t);
        trace.r.push(self.config.reference.r.at(t));
        trace.reference.push(nodes[LEADER].to_vec());
        trace.states.push(nodes[1..].iter().map(|x| x.to_vec()).collect());
        trace.controls.push(u);
        trace.augmented.push(y.to_vec());
        trace
            .ref_errors
            .push(nodes[1..].iter().map(|x| diff_norm(x, nodes[LEADER])).collect());
        trace
            .edge_errors
            .push(trace.edges.iter().map(|&[j, i]| diff_norm(nodes[i], nodes[j])).collect());
        Ok(())
    }

    /// Lyapunov function at one sample:
    /// `Σ_i E_iᵀ P E_i + Σ (‖k̃‖² terms) / (γ |k*_ri|) + Σ ‖θ_i - θ_ref,i‖² / γ`,
    /// where estimated-mode links use `û_ji - k*_rij u_j` in place of `k̃_rij`.
    pub fn lyapunov_diagnostic(
        &self,
        y: &[f64],
        controls: &[f64],
        theta_ref: &[Vec<f64>],
        oracle: &[AgentOracle],
    ) -> f64 {
        let (_, _, controllers) = self.layout.unpack(y, &self.template);
        let states = self.layout.node_states(y);
        let p = &self.cert.p;
        let topo = &self.config.topology;
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut v = 0.0;
        for (k, c) in controllers.iter().enumerate() {
            let i = k + 1;
            let o = &oracle[k];
            let (e_all, _) = crate::controller::aggregate_errors(topo, i, &states).expect("validated");
            let e = DVector::from_vec(e_all);
            v += (e.transpose() * p * &e)[(0, 0)];
            let scale = c.gamma * o.feedback.1.abs();
            if let Some(l) = &c.leader {
                v += (sq(&l.k_m, &o.feedback.0) + (l.k_r - o.feedback.1).powi(2)) / scale;
            }
            v += sq(&c.k_mi, &o.feedback.0) / scale;
            for (g, (j, k_mij, k_rij)) in c.neighbors.iter().zip(&o.neighbors) {
                let ideal_coupling = match c.mode {
                    InputMode::Communicated => *k_rij,
                    InputMode::Estimated => k_rij * controls[j - 1],
                };
                v += (sq(&g.k_mij, k_mij) + (g.coupling - ideal_coupling).powi(2)) / scale;
            }
            v += sq(&c.nn.theta, &theta_ref[k]) / c.gamma;
        }
        v
    }

    /// Empirical Lyapunov series: the unknown ideal network weights are
    /// replaced by the final adapted weights.
    pub fn lyapunov_series(&self, trace: &SimulationTrace, oracle: &[AgentOracle]) -> Vec<f64> {
        let Some(last) = trace.augmented.last() else {
            return Vec::new();
        };
        let (_, _, final_ctrl) = self.layout.unpack(last, &self.template);
        let theta_ref: Vec<Vec<f64>> = final_ctrl.into_iter().map(|c| c.nn.theta).collect();
        trace
            .augmented
            .iter()
            .zip(&trace.controls)
            .map(|(y, u)| self.lyapunov_diagnostic(y, u, &theta_ref, oracle))
            .collect()
    }
}

/// Layout of the augmented state for `config`.
pub fn assemble_augmented_state(config: &ScenarioConfig) -> Result<StateLayout, SimError> {
    Ok(Simulator::new(config.clone())?.layout)
}

/// One step of the coupled system from `(t, state)`.
pub fn step(config: &ScenarioConfig, state: &[f64], t: f64, dt: f64) -> Result<Vec<f64>, SimError> {
    Simulator::new(config.clone())?.step(state, t, dt)
}

pub fn run(config: &ScenarioConfig) -> Result<SimulationTrace, SimError> {
    Simulator::new(config.clone())?.run()
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, PartialEq)]
pub struct AgentMetrics {
    pub agent: usize,
    pub final_error: f64,
    pub peak_error: f64,
    /// First time after which the error stays at or below the tolerance.
    pub time_to_tolerance: Option<f64>,
    /// Mean error over the last 10% of samples.
    pub final_window_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorMetrics {
    pub agent: usize,
    pub neighbor: usize,
    /// `û_ji - u_j` at the last sample.
    pub final_error: f64,
    pub peak_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncMetrics {
    pub tolerance: f64,
    pub agents: Vec<AgentMetrics>,
    pub estimators: Vec<EstimatorMetrics>,
}

impl SyncMetrics {
    pub fn max_final_error(&self) -> f64 {
        self.agents.iter().map(|a| a.final_error).fold(0.0, f64::max)
    }

    pub fn max_peak_error(&self) -> f64 {
        self.agents.iter().map(|a| a.peak_error).fold(0.0, f64::max)
    }

    /// Slowest agent's time-to-tolerance, `None` if any agent never settles.
    pub fn settling_time(&self) -> Option<f64> {
        self.agents
            .iter()
            .map(|a| a.time_to_tolerance)
            .try_fold(0.0, |acc: f64, t| t.map(|t| acc.max(t)))
    }
}

fn settle_time(times: &[f64], errors: impl Iterator<Item = f64> + Clone, tolerance: f64) -> Option<f64> {
    let errors: Vec<f64> = errors.collect();
    match errors.iter().rposition(|&e| e > tolerance) {
        None => times.first().copied(),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

pub fn sync_metrics(trace: &SimulationTrace, tolerance: f64) -> SyncMetrics {
    let n_agents = trace.n_agents();
    let samples = trace.len();
    let window = (samples / 10).max(1).min(samples);
    let agents = (0..n_agents)
        .map(|k| {
            let series = trace.ref_errors.iter().map(move |e| e[k]);
            let tail: Vec<f64> = series.clone().skip(samples - window).collect();
            AgentMetrics {
                agent: k + 1,
                final_error: trace.ref_errors.last().map_or(0.0, |e| e[k]),
                peak_error: series.clone().fold(0.0, f64::max),
                time_to_tolerance: settle_time(&trace.times, series, tolerance),
                final_window_mean: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
            }
        })
        .collect();

    let mut estimators = Vec::new();
    for entry in trace.layout.entries() {
        let Some(ids) = entry.label.strip_prefix("u_hat[").and_then(|s| s.strip_suffix(']')) else {
            continue;
        };
        let mut parts = ids.split(',').map(|p| p.parse::<usize>().expect("layout label"));
        let (i, j) = (parts.next().unwrap(), parts.next().unwrap());
        let errors: Vec<f64> = trace
            .augmented
            .iter()
            .zip(&trace.controls)
            .map(|(y, u)| y[entry.range.start] - u[j - 1])
            .collect();
        estimators.push(EstimatorMetrics {
            agent: i,
            neighbor: j,
            final_error: errors.last().copied().unwrap_or(0.0),
            peak_error: errors.iter().map(|e| e.abs()).fold(0.0, f64::max),
        });
    }
    SyncMetrics {
        tolerance,
        agents,
        estimators,
    }
}
