//! Distributed MRAC laws with a sigmoidal neural-network cancellation term.
//!
//! One [`AgentController`] covers every follower. A follower that observes
//! the reference carries [`LeaderGains`]; a follower that observes other
//! followers carries one [`NeighborGains`] per such neighbor plus the
//! consensus gain `k_mi`. Everything inside the control parenthesis is scaled
//! by `alpha = 1 / in-degree`.
//!
//! Adaptive rates are driven by the projected error `s = b0ᵀ P E`, where `E`
//! is the aggregate `Σ_j a_ij (x_i - x_j)` over all in-neighbors, the
//! reference included.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{GraphTopology, TopologyError, LEADER};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("control of neighbor {0} is not available yet")]
    MissingNeighborControl(usize),
    #[error("agent {agent} is configured for {expected:?} inputs")]
    ModeMismatch { agent: usize, expected: InputMode },
    #[error("agent {0} does not observe the reference")]
    NoLeaderLink(usize),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// How a follower learns its neighbors' inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Neighbors transmit `u_j`; the follower adapts `k_rij`.
    #[default]
    Communicated,
    /// No input is transmitted; the follower adapts an estimate `û_ji`.
    Estimated,
}

/// Which state multiplies `k_mij` in the control law. The adaptive law
/// always uses the follower's own state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KmijState {
    /// `k_mijᵀ x_j` in the control.
    #[default]
    Neighbor,
    /// `k_mijᵀ x_i` in the control.
    Own,
}

/// Input signal multiplying the error in the `k_rij` law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingRegressor {
    /// `k̇_rij ∝ u_j`, the neighbor input the gain multiplies.
    #[default]
    Neighbor,
    /// `k̇_rij ∝ u_i`.
    Own,
}

/// Sign convention of the error fed to the network weight laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnErrorSign {
    /// Reference-minus-agent error `-E`. With the `-θᵀφ` cancellation term
    /// this is the convention under which the weight laws reduce the error.
    #[default]
    Tracking,
    /// Agent-minus-reference error `E`, the same signal the gain laws use.
    /// Turns the network into positive feedback.
    SameAsGains,
}

/// How adaptive gains start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainInit {
    #[default]
    Zero,
    /// Preloaded with the matching-oracle values (simulator-side knowledge).
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSettings {
    pub gamma: f64,
    /// Lyapunov weight `Q` (row-major rows).
    pub q: Vec<Vec<f64>>,
    pub hidden: usize,
    pub slope: f64,
    /// Fixed bias vector `V`; a single entry is broadcast to all hidden units.
    pub v: Vec<f64>,
    pub seed: u64,
    /// Half-width of the uniform network weight initialization.
    pub init_range: f64,
    pub mode: InputMode,
    pub kmij_state: KmijState,
    pub krij_regressor: CouplingRegressor,
    pub nn_error: NnErrorSign,
    pub adapt_nn: bool,
    pub gain_init: GainInit,
    /// `u ≡ 0` and no adaptation.
    pub open_loop: bool,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            q: vec![vec![100.0, 0.0], vec![0.0, 1.0]],
            hidden: 6,
            slope: 1.0,
            v: vec![1.0],
            seed: 0,
            init_range: 0.3,
            mode: InputMode::Communicated,
            kmij_state: KmijState::Neighbor,
            krij_regressor: CouplingRegressor::Neighbor,
            nn_error: NnErrorSign::Tracking,
            adapt_nn: true,
            gain_init: GainInit::Zero,
            open_loop: false,
        }
    }
}

impl ControllerSettings {
    pub fn bias_vector(&self) -> Vec<f64> {
        if self.v.len() == 1 {
            vec![self.v[0]; self.hidden]
        } else {
            self.v.clone()
        }
    }
}

/// Single-hidden-layer network `θᵀ [1; σ(Wᵀ [1; x])]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralApprox {
    /// Output weights, length `m + 1`.
    pub theta: Vec<f64>,
    /// Inner weights, `(n + 1) × m`, row-major.
    pub w: Vec<f64>,
    /// Fixed bias vector, length `m`.
    pub v: Vec<f64>,
    pub slope: f64,
}

impl NeuralApprox {
    pub fn zeros(n: usize, m: usize, slope: f64, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), m, "bias vector length must equal hidden width");
        Self {
            theta: vec![0.0; m + 1],
            w: vec![0.0; (n + 1) * m],
            v,
            slope,
        }
    }

    pub fn random<R: Rng>(n: usize, m: usize, slope: f64, v: Vec<f64>, range: f64, rng: &mut R) -> Self {
        let mut nn = Self::zeros(n, m, slope, v);
        if range > 0.0 {
            for t in nn.theta.iter_mut().chain(nn.w.iter_mut()) {
                *t = rng.random_range(-range..=range);
            }
        }
        nn
    }

    pub fn hidden_width(&self) -> usize {
        self.v.len()
    }

    /// Hidden activations `σ(Wᵀ x̄)`.
    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let m = self.hidden_width();
        (0..m)
            .map(|k| {
                let z = self.w[k] + x.iter().enumerate().map(|(r, xr)| self.w[(r + 1) * m + k] * xr).sum::<f64>();
                1.0 / (1.0 + (-self.slope * z).exp())
            })
            .collect()
    }

    /// `θᵀ φ(x)`.
    pub fn output(&self, x: &[f64]) -> f64 {
        self.theta
            .iter()
            .zip(sigmoid_basis(self, x))
            .map(|(t, p)| t * p)
            .sum()
    }
}

/// `φ = [1; σ(Wᵀ [1; x])]`.
pub fn sigmoid_basis(nn: &NeuralApprox, x: &[f64]) -> Vec<f64> {
    let mut phi = Vec::with_capacity(nn.hidden_width() + 1);
    phi.push(1.0);
    phi.extend(nn.hidden(x));
    phi
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderGains {
    pub k_m: Vec<f64>,
    pub k_r: f64,
}

/// Per-neighbor gains. `coupling` is `k_rij` in communicated mode and the
/// input estimate `û_ji` in estimated mode.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGains {
    pub id: usize,
    pub k_mij: Vec<f64>,
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentController {
    pub id: usize,
    pub gamma: f64,
    pub sign_kr: f64,
    pub mode: InputMode,
    pub kmij_state: KmijState,
    pub krij_regressor: CouplingRegressor,
    pub alpha: f64,
    pub leader: Option<LeaderGains>,
    /// Follower in-neighbors, ascending id.
    pub neighbors: Vec<NeighborGains>,
    pub k_mi: Vec<f64>,
    pub nn: NeuralApprox,
}

impl AgentController {
    /// Zero gains and the given network, shaped for agent `id` in `topology`.
    pub fn new(
        id: usize,
        topology: &GraphTopology,
        n: usize,
        settings: &ControllerSettings,
        sign_kr: f64,
        mode: InputMode,
        nn: NeuralApprox,
    ) -> Result<Self, TopologyError> {
        let leader = topology.observes_leader(id)?.then(|| LeaderGains {
            k_m: vec![0.0; n],
            k_r: 0.0,
        });
        let neighbors = topology
            .follower_neighbors(id)?
            .into_iter()
            .map(|j| NeighborGains {
                id: j,
                k_mij: vec![0.0; n],
                coupling: 0.0,
            })
            .collect();
        Ok(Self {
            id,
            gamma: settings.gamma,
            sign_kr,
            mode,
            kmij_state: settings.kmij_state,
            krij_regressor: settings.krij_regressor,
            alpha: topology.alpha(id)?,
            leader,
            neighbors,
            k_mi: vec![0.0; n],
            nn,
        })
    }

    pub fn dim(&self) -> usize {
        self.k_mi.len()
    }

    /// Adaptive quantities in packing order: leader `k_m`, `k_r`; per
    /// neighbor `k_mij`, coupling; `k_mi`;
    /// `θ`; `W`. [`AgentRates::values`] uses the same order.
    pub fn params(&self) -> impl Iterator<Item = &f64> + '_ {
        let leader = self
            .leader
            .iter()
            .flat_map(|l| l.k_m.iter().chain(std::iter::once(&l.k_r)));
        let neighbors = self
            .neighbors
            .iter()
            .flat_map(|g| g.k_mij.iter().chain(std::iter::once(&g.coupling)));
        leader
            .chain(neighbors)
            .chain(self.k_mi.iter())
            .chain(self.nn.theta.iter())
            .chain(self.nn.w.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        let leader = self
            .leader
            .iter_mut()
            .flat_map(|l| l.k_m.iter_mut().chain(std::iter::once(&mut l.k_r)));
        let neighbors = self
            .neighbors
            .iter_mut()
            .flat_map(|g| g.k_mij.iter_mut().chain(std::iter::once(&mut g.coupling)));
        leader
            .chain(neighbors)
            .chain(self.k_mi.iter_mut())
            .chain(self.nn.theta.iter_mut())
            .chain(self.nn.w.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.params().count()
    }
}

/// Time derivatives of every adaptive quantity of one agent, shaped like the
/// controller itself.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRates {
    pub leader: Option<LeaderGains>,
    pub neighbors: Vec<NeighborGains>,
    pub k_mi: Vec<f64>,
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
}

impl AgentRates {
    pub fn zeros_like(ctrl: &AgentController) -> Self {
        let n = ctrl.dim();
        Self {
            leader: ctrl.leader.as_ref().map(|_| LeaderGains {
                k_m: vec![0.0; n],
                k_r: 0.0,
            }),
            neighbors: ctrl
                .neighbors
                .iter()
                .map(|g| NeighborGains {
                    id: g.id,
                    k_mij: vec![0.0; n],
                    coupling: 0.0,
                })
                .collect(),
            k_mi: vec![0.0; n],
            theta: vec![0.0; ctrl.nn.theta.len()],
            w: vec![0.0; ctrl.nn.w.len()],
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        let leader = self
            .leader
            .iter()
            .flat_map(|l| l.k_m.iter().copied().chain(std::iter::once(l.k_r)));
        let neighbors = self
            .neighbors
            .iter()
            .flat_map(|g| g.k_mij.iter().copied().chain(std::iter::once(g.coupling)));
        leader
            .chain(neighbors)
            .chain(self.k_mi.iter().copied())
            .chain(self.theta.iter().copied())
            .chain(self.w.iter().copied())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Aggregate errors of agent `i`: `(Σ_j a_ij (x_i - x_j)` over all
/// in-neighbors, the same sum over follower neighbors only`)`.
///
/// `states[j]` is the state of node `j`; `states[0]` is the reference.
pub fn aggregate_errors(
    topology: &GraphTopology,
    i: usize,
    states: &[&[f64]],
) -> Result<(Vec<f64>, Vec<f64>), TopologyError> {
    let xi = states[i];
    let mut all = vec![0.0; xi.len()];
    let mut followers = vec![0.0; xi.len()];
    for j in topology.in_neighbors(i)? {
        for k in 0..xi.len() {
            let e = xi[k] - states[j][k];
            all[k] += e;
            if j != LEADER {
                followers[k] += e;
            }
        }
    }
    Ok((all, followers))
}

/// Single-agent law `k_mᵀ x + k_r r - θᵀφ(x)`.
pub fn leader_control(gains: &LeaderGains, nn: &NeuralApprox, x: &[f64], r: f64) -> f64 {
    dot(&gains.k_m, x) + gains.k_r * r - nn.output(x)
}

/// Rates `(k̇_m, k̇_r)` of a leader link for tracking error `e = x - x0`:
/// `k̇_m = -sgn γ (b0ᵀ P e) x`, `k̇_r = -sgn γ (b0ᵀ P e) r`.
///
/// `p_b0` is `P b0`.
pub fn leader_adaptive_rates(
    gamma: f64,
    sign_kr: f64,
    x: &[f64],
    e: &[f64],
    r: f64,
    p_b0: &[f64],
) -> (Vec<f64>, f64) {
    let s = dot(p_b0, e);
    let k_m = x.iter().map(|xi| -sign_kr * gamma * s * xi).collect();
    (k_m, -sign_kr * gamma * s * r)
}

/// Network weight rates for error signal `e`, with `p_b = P b`:
/// `θ̇ = -γ φ s`, `Ẇ = -γ s x̄ (V ⊙ σ)ᵀ`, where `s = eᵀ P b`.
pub fn nn_adaptive_rates(
    nn: &NeuralApprox,
    gamma: f64,
    x: &[f64],
    e: &[f64],
    p_b: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let s = dot(e, p_b);
    let sigma = nn.hidden(x);
    let theta: Vec<f64> = std::iter::once(1.0)
        .chain(sigma.iter().copied())
        .map(|p| -gamma * p * s)
        .collect();
    let m = sigma.len();
    let gated: Vec<f64> = nn.v.iter().zip(&sigma).map(|(v, s)| v * s).collect();
    let mut w = vec![0.0; (x.len() + 1) * m];
    for (r, xr) in std::iter::once(1.0).chain(x.iter().copied()).enumerate() {
        for k in 0..m {
            w[r * m + k] = -gamma * s * xr * gated[k];
        }
    }
    (theta, w)
}

fn neighbor_state_terms(ctrl: &AgentController, states: &[&[f64]]) -> f64 {
    let own = states[ctrl.id];
    ctrl.neighbors
        .iter()
        .map(|g| match ctrl.kmij_state {
            KmijState::Neighbor => dot(&g.k_mij, states[g.id]),
            KmijState::Own => dot(&g.k_mij, own),
        })
        .sum()
}

fn shared_terms(
    ctrl: &AgentController,
    topology: &GraphTopology,
    states: &[&[f64]],
    r: f64,
) -> Result<f64, ControlError> {
    let x = states[ctrl.id];
    let (_, e_followers) = aggregate_errors(topology, ctrl.id, states)?;
    let leader = ctrl
        .leader
        .as_ref()
        .map_or(0.0, |g| dot(&g.k_m, x) + g.k_r * r);
    Ok(leader + neighbor_state_terms(ctrl, states) + dot(&ctrl.k_mi, &e_followers) - ctrl.nn.output(x))
}

/// Follower law with transmitted neighbor inputs:
/// `u_i = α (Σ k_mijᵀ x_j + k_miᵀ Σ (x_i - x_j) + Σ k_rij u_j - θᵀφ(x_i))`,
/// plus `k_mᵀ x_i + k_r r` inside the parenthesis when `i` observes the
/// reference.
///
/// `controls[j]` must hold `u_j` for every follower neighbor `j`.
pub fn follower_control_communicated(
    ctrl: &AgentController,
    topology: &GraphTopology,
    states: &[&[f64]],
    controls: &[Option<f64>],
    r: f64,
) -> Result<f64, ControlError> {
    if ctrl.mode != InputMode::Communicated {
        return Err(ControlError::ModeMismatch {
            agent: ctrl.id,
            expected: ctrl.mode,
        });
    }
    let mut coupling = 0.0;
    for g in &ctrl.neighbors {
        let uj = controls
            .get(g.id)
            .copied()
            .flatten()
            .ok_or(ControlError::MissingNeighborControl(g.id))?;
        coupling += g.coupling * uj;
    }
    Ok(ctrl.alpha * (shared_terms(ctrl, topology, states, r)? + coupling))
}

/// Follower law with estimated neighbor inputs: as the communicated law
/// with `k_rij u_j` replaced by `û_ji`.
pub fn follower_control_estimated(
    ctrl: &AgentController,
    topology: &GraphTopology,
    states: &[&[f64]],
    r: f64,
) -> Result<f64, ControlError> {
    if ctrl.mode != InputMode::Estimated {
        return Err(ControlError::ModeMismatch {
            agent: ctrl.id,
            expected: ctrl.mode,
        });
    }
    let estimates: f64 = ctrl.neighbors.iter().map(|g| g.coupling).sum();
    Ok(ctrl.alpha * (shared_terms(ctrl, topology, states, r)? + estimates))
}

/// Dispatches on the agent's mode.
pub fn agent_control(
    ctrl: &AgentController,
    topology: &GraphTopology,
    states: &[&[f64]],
    controls: &[Option<f64>],
    r: f64,
) -> Result<f64, ControlError> {
    match ctrl.mode {
        InputMode::Communicated => follower_control_communicated(ctrl, topology, states, controls, r),
        InputMode::Estimated => follower_control_estimated(ctrl, topology, states, r),
    }
}

/// Gain rates of the follower links for aggregate error `e_all` and
/// follower-only aggregate `e_followers`, with `s = b0ᵀ P e_all`:
/// `k̇_mij = -sgn γ s x_i`, `k̇_mi = -sgn γ s e_followers`, and in
/// communicated mode `k̇_rij = -sgn γ s u_j` (or `u_i`, see
/// [`CouplingRegressor`]).
///
/// `inputs[j]` is the control of node `j`.
pub fn follower_adaptive_rates(
    ctrl: &AgentController,
    x: &[f64],
    e_all: &[f64],
    e_followers: &[f64],
    inputs: &[f64],
    p_b0: &[f64],
) -> (Vec<NeighborGains>, Vec<f64>) {
    let g = -ctrl.sign_kr * ctrl.gamma * dot(p_b0, e_all);
    let k_mij: Vec<f64> = x.iter().map(|xi| g * xi).collect();
    let neighbors = ctrl
        .neighbors
        .iter()
        .map(|n| NeighborGains {
            id: n.id,
            k_mij: k_mij.clone(),
            coupling: match ctrl.mode {
                InputMode::Communicated => match ctrl.krij_regressor {
                    CouplingRegressor::Neighbor => g * inputs[n.id],
                    CouplingRegressor::Own => g * inputs[ctrl.id],
                },
                InputMode::Estimated => g,
            },
        })
        .collect();
    (neighbors, e_followers.iter().map(|e| g * e).collect())
}

/// Rate of each neighbor input estimate, `û̇_ji = -sgn γ b0ᵀ P e_all`
/// (the same scalar for every neighbor).
pub fn input_estimator_rate(ctrl: &AgentController, e_all: &[f64], p_b0: &[f64]) -> Vec<f64> {
    let rate = -ctrl.sign_kr * ctrl.gamma * dot(p_b0, e_all);
    vec![rate; ctrl.neighbors.len()]
}

/// Every rate of agent `i` given all node states and controls (`inputs[j]`
/// for node `j`) and the reference value `r`. `p_b0 = P b0`, `p_bi = P b_i`.
#[allow(clippy::too_many_arguments)]
pub fn agent_rates(
    ctrl: &AgentController,
    topology: &GraphTopology,
    states: &[&[f64]],
    inputs: &[f64],
    r: f64,
    p_b0: &[f64],
    p_bi: &[f64],
    nn_error: NnErrorSign,
    adapt_nn: bool,
) -> Result<AgentRates, TopologyError> {
    let x = states[ctrl.id];
    let (e_all, e_followers) = aggregate_errors(topology, ctrl.id, states)?;
    let mut rates = AgentRates::zeros_like(ctrl);

    if let Some(leader) = rates.leader.as_mut() {
        let (k_m, k_r) = leader_adaptive_rates(ctrl.gamma, ctrl.sign_kr, x, &e_all, r, p_b0);
        leader.k_m = k_m;
        leader.k_r = k_r;
    }
    if !ctrl.neighbors.is_empty() {
        let (neighbors, k_mi) = follower_adaptive_rates(ctrl, x, &e_all, &e_followers, inputs, p_b0);
        rates.neighbors = neighbors;
        rates.k_mi = k_mi;
    }
    if adapt_nn {
        let e_nn: Vec<f64> = match nn_error {
            NnErrorSign::Tracking => e_all.iter().map(|e| -e).collect(),
            NnErrorSign::SameAsGains => e_all,
        };
        let (theta, w) = nn_adaptive_rates(&ctrl.nn, ctrl.gamma, x, &e_nn, p_bi);
        rates.theta = theta;
        rates.w = w;
    }
    Ok(rates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nn_zero(m: usize) -> NeuralApprox {
        NeuralApprox::zeros(2, m, 1.0, vec![1.0; m])
    }

    fn controller(topology: &GraphTopology, id: usize, mode: InputMode, nn: NeuralApprox) -> AgentController {
        let settings = ControllerSettings {
            hidden: nn.hidden_width(),
            ..Default::default()
        };
        AgentController::new(id, topology, 2, &settings, 1.0, mode, nn).unwrap()
    }

    #[test]
    fn basis_with_zero_weights_is_one_half() {
        let nn = nn_zero(4);
        assert_eq!(sigmoid_basis(&nn, &[3.0, -8.0]), vec![1.0, 0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn basis_saturates() {
        let mut nn = nn_zero(1);
        nn.w = vec![0.0, 1.0, 0.0];
        let phi = sigmoid_basis(&nn, &[1e4, 0.0]);
        assert_eq!(phi[1], 1.0);
        let phi = sigmoid_basis(&nn, &[-1e4, 0.0]);
        assert_eq!(phi[1], 0.0);
    }

    #[test]
    fn basis_at_log_three() {
        let mut nn = nn_zero(1);
        // Wᵀ x̄ = w0 + w1 x1 + w2 x2 = ln 3 with x = [1, 0].
        nn.w = vec![0.0, 3f64.ln(), 0.0];
        let phi = sigmoid_basis(&nn, &[1.0, 0.0]);
        assert_abs_diff_eq!(phi[1], 0.75, epsilon = 1e-15);
        assert_eq!(phi[0], 1.0);
    }

    #[test]
    fn leader_control_examples() {
        let nn = nn_zero(3);
        let zero = LeaderGains { k_m: vec![0.0; 2], k_r: 0.0 };
        assert_eq!(leader_control(&zero, &nn, &[1.0, 2.0], 1.0), 0.0);

        let ideal = LeaderGains { k_m: vec![2.0, -3.0], k_r: 2.0 };
        assert_eq!(leader_control(&ideal, &nn, &[1.0, 0.0], 1.0), 4.0);

        let mut with_bias = nn.clone();
        with_bias.theta[0] = 1.0;
        assert_eq!(leader_control(&ideal, &with_bias, &[1.0, 0.0], 1.0), 3.0);
    }

    #[test]
    fn leader_rates_examples() {
        let x = [0.4, -0.2];
        let (km, kr) = leader_adaptive_rates(10.0, 1.0, &x, &[0.0, 0.0], 1.0, &[0.0, 1.0]);
        assert_eq!(km, vec![0.0, 0.0]);
        assert_eq!(kr, 0.0);

        let (_, kr) = leader_adaptive_rates(10.0, 1.0, &x, &[0.3, 0.7], 0.0, &[0.0, 1.0]);
        assert_eq!(kr, 0.0);

        // P = I so P b0 = b0 = [0, 1]; s = 1.
        let (km, _) = leader_adaptive_rates(10.0, 1.0, &[1.0, 0.0], &[0.0, 1.0], 1.0, &[0.0, 1.0]);
        assert_eq!(km, vec![-10.0, 0.0]);
    }

    #[test]
    fn nn_rates_examples() {
        let nn = nn_zero(1);
        let (theta, w) = nn_adaptive_rates(&nn, 10.0, &[1.0, 2.0], &[0.0, 0.0], &[0.0, 1.0]);
        assert!(theta.iter().chain(&w).all(|&v| v == 0.0));

        let mut gated = nn_zero(2);
        gated.v = vec![0.0, 0.0];
        let (theta, w) = nn_adaptive_rates(&gated, 10.0, &[1.0, 2.0], &[0.0, 1.0], &[0.0, 1.0]);
        assert!(w.iter().all(|&v| v == 0.0));
        assert!(theta.iter().any(|&v| v != 0.0));

        // σ(0) = 0.5, x̄ = [1, 0, 0], s = 1.
        let (theta, w) = nn_adaptive_rates(&nn, 1.0, &[0.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]);
        assert_eq!(theta, vec![-1.0, -0.5]);
        assert_eq!(w, vec![-0.5, 0.0, 0.0]);
    }

    #[test]
    fn follower_control_zero_gains() {
        let g = GraphTopology::chain(2);
        let c = controller(&g, 2, InputMode::Communicated, nn_zero(2));
        let states: [&[f64]; 3] = [&[1.0, 2.0], &[0.5, 0.1], &[-1.0, 3.0]];
        assert_eq!(
            follower_control_communicated(&c, &g, &states, &[None, Some(4.0), None], 1.0).unwrap(),
            0.0
        );
        assert_eq!(
            follower_control_communicated(&c, &g, &states, &[None, None, None], 1.0),
            Err(ControlError::MissingNeighborControl(1))
        );
    }

    #[test]
    fn consensus_term_vanishes_for_equal_states() {
        let g = GraphTopology::from_edges(3, &[[0, 1], [0, 2], [1, 3], [2, 3]]).unwrap();
        let mut c = controller(&g, 3, InputMode::Communicated, nn_zero(2));
        c.k_mi = vec![100.0, -50.0];
        c.neighbors[0].k_mij = vec![1.0, 2.0];
        c.neighbors[0].coupling = 0.5;
        c.neighbors[1].k_mij = vec![-1.0, 0.5];
        c.neighbors[1].coupling = 2.0;
        c.nn.theta = vec![0.2, 0.0, 0.0];
        let x = [0.7, -0.3];
        let states: [&[f64]; 4] = [&[0.0, 0.0], &x, &x, &x];
        let u = follower_control_communicated(&c, &g, &states, &[None, Some(1.0), Some(-2.0), None], 0.0)
            .unwrap();
        let expected = 0.5 * ((0.7 - 0.6) + (-0.7 - 0.15) + 0.5 * 1.0 + 2.0 * -2.0 - 0.2);
        assert_abs_diff_eq!(u, expected, epsilon = 1e-14);
    }

    #[test]
    fn estimated_matches_communicated_when_pinned() {
        let g = GraphTopology::from_edges(3, &[[0, 1], [0, 2], [1, 3], [2, 3]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nn = NeuralApprox::random(2, 3, 1.0, vec![1.0; 3], 0.3, &mut rng);
        let mut comm = controller(&g, 3, InputMode::Communicated, nn);
        comm.k_mi = vec![0.3, -0.4];
        comm.neighbors[0].k_mij = vec![1.0, 2.0];
        comm.neighbors[0].coupling = 0.5;
        comm.neighbors[1].k_mij = vec![-1.0, 0.5];
        comm.neighbors[1].coupling = 2.0;
        let controls = [None, Some(1.5), Some(-0.25), None];
        let mut est = comm.clone();
        est.mode = InputMode::Estimated;
        for ngh in est.neighbors.iter_mut() {
            ngh.coupling *= controls[ngh.id].unwrap();
        }
        let states: [&[f64]; 4] = [&[0.0, 1.0], &[0.2, 0.4], &[-0.3, 0.9], &[1.1, -0.6]];
        let a = follower_control_communicated(&comm, &g, &states, &controls, 1.0).unwrap();
        let b = follower_control_estimated(&est, &g, &states, 1.0).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        assert!(matches!(
            follower_control_estimated(&comm, &g, &states, 1.0),
            Err(ControlError::ModeMismatch { agent: 3, .. })
        ));
    }

    #[test]
    fn estimated_with_zero_estimates_and_gains() {
        let g = GraphTopology::chain(3);
        let c = controller(&g, 3, InputMode::Estimated, nn_zero(2));
        let states: [&[f64]; 4] = [&[1.0, 0.0], &[2.0, 0.0], &[3.0, 0.0], &[4.0, 0.0]];
        assert_eq!(follower_control_estimated(&c, &g, &states, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn only_network_term_at_start() {
        let g = GraphTopology::chain(6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nn = NeuralApprox::random(2, 6, 1.0, vec![1.0; 6], 0.3, &mut rng);
        let c = controller(&g, 4, InputMode::Estimated, nn.clone());
        let xs: Vec<[f64; 2]> = vec![[1.0, -1.0], [1.0, 0.0], [-1.0, 0.5], [1.0, 0.0], [-1.0, 1.0], [-0.5, 1.0], [0.0, -1.0]];
        let states: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let u = follower_control_estimated(&c, &g, &states, 1.0).unwrap();
        assert_eq!(u, -c.alpha * nn.output(&xs[4]));
    }

    #[test]
    fn follower_rates_example() {
        let g = GraphTopology::chain(2);
        let c = controller(&g, 2, InputMode::Communicated, nn_zero(1));
        // P = I, b0 = [0, 1], E = [0, 2], x_i = [1, 1]: s = 2.
        let (ngh, k_mi) = follower_adaptive_rates(&c, &[1.0, 1.0], &[0.0, 2.0], &[0.0, 2.0], &[1.0, 0.0, 0.0], &[0.0, 1.0]);
        assert_eq!(ngh[0].k_mij, vec![-20.0, -20.0]);
        assert_eq!(k_mi, vec![0.0, -40.0]);
        assert_eq!(ngh[0].coupling, 0.0);

        let (ngh, k_mi) = follower_adaptive_rates(&c, &[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], &[1.0, 3.0, 3.0], &[0.0, 1.0]);
        assert!(ngh[0].k_mij.iter().chain(&k_mi).all(|&v| v == 0.0));
        assert_eq!(ngh[0].coupling, 0.0);
    }

    #[test]
    fn coupling_regressor_selects_the_input() {
        let g = GraphTopology::chain(2);
        let mut c = controller(&g, 2, InputMode::Communicated, nn_zero(1));
        // s = 2, γ = 10
        let inputs = [1.0, 3.0, 0.0];
        let (ngh, _) = follower_adaptive_rates(&c, &[1.0, 1.0], &[0.0, 2.0], &[0.0, 2.0], &inputs, &[0.0, 1.0]);
        assert_eq!(ngh[0].coupling, -60.0);
        c.krij_regressor = CouplingRegressor::Own;
        let (ngh, _) = follower_adaptive_rates(&c, &[1.0, 1.0], &[0.0, 2.0], &[0.0, 2.0], &inputs, &[0.0, 1.0]);
        assert_eq!(ngh[0].coupling, 0.0);
        let (ngh, _) = follower_adaptive_rates(&c, &[1.0, 1.0], &[0.0, 2.0], &[0.0, 2.0], &[1.0, 3.0, 0.5], &[0.0, 1.0]);
        assert_eq!(ngh[0].coupling, -10.0);
    }

    #[test]
    fn estimator_rate_examples() {
        let g = GraphTopology::chain(2);
        let mut c = controller(&g, 2, InputMode::Estimated, nn_zero(1));
        assert_eq!(input_estimator_rate(&c, &[0.0, 0.0], &[0.0, 1.0]), vec![0.0]);
        assert_eq!(input_estimator_rate(&c, &[0.0, -1.0], &[0.0, 1.0]), vec![10.0]);
        c.sign_kr = -1.0;
        assert_eq!(input_estimator_rate(&c, &[0.0, -1.0], &[0.0, 1.0]), vec![-10.0]);
    }

    #[test]
    fn estimator_rate_per_neighbor() {
        let g = GraphTopology::from_edges(3, &[[0, 1], [0, 2], [1, 3], [2, 3]]).unwrap();
        let c = controller(&g, 3, InputMode::Estimated, nn_zero(1));
        assert_eq!(input_estimator_rate(&c, &[0.0, 0.5], &[0.0, 2.0]), vec![-10.0, -10.0]);
    }

    fn random_controller(rng: &mut ChaCha8Rng, topology: &GraphTopology, id: usize, mode: InputMode) -> AgentController {
        let nn = NeuralApprox::random(2, 3, 1.0, vec![1.0; 3], 0.3, rng);
        let mut c = controller(topology, id, mode, nn);
        if let Some(l) = c.leader.as_mut() {
            l.k_m = vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            l.k_r = rng.random_range(-5.0..5.0);
        }
        for g in c.neighbors.iter_mut() {
            g.k_mij = vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            g.coupling = rng.random_range(-5.0..5.0);
        }
        c.k_mi = vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        c
    }

    #[test]
    fn rates_vanish_without_error() {
        let g = GraphTopology::from_edges(3, &[[0, 1], [0, 2], [1, 3], [2, 3], [0, 3]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let mode = if trial % 2 == 0 { InputMode::Communicated } else { InputMode::Estimated };
            let c = random_controller(&mut rng, &g, 3, mode);
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let states: [&[f64]; 4] = [&x, &x, &x, &x];
            let rates = agent_rates(&c, &g, &states, &[1.0, 0.4, -2.0, 1.7], 1.0, &[200.0, 401.0], &[100.0, 200.5], NnErrorSign::Tracking, true)
                .unwrap();
            assert!(rates.values().all(|v| v == 0.0));
            assert!(input_estimator_rate(&c, &[0.0, 0.0], &[200.0, 401.0]).iter().all(|&v| v == 0.0));
        }
    }

    proptest! {
        #[test]
        fn rates_are_odd_in_the_error_except_consensus(
            seed in 0u64..1000,
            e in proptest::array::uniform2(-2.0..2.0f64),
            u in -3.0..3.0f64,
        ) {
            let g = GraphTopology::chain(2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_controller(&mut rng, &g, 2, InputMode::Communicated);
            let x = [0.3, -1.2];
            let neg = [-e[0], -e[1]];
            let pb0 = [200.0, 401.0];
            let (n_pos, k_pos) = follower_adaptive_rates(&c, &x, &e, &e, &[1.0, u, -u], &pb0);
            let (n_neg, k_neg) = follower_adaptive_rates(&c, &x, &neg, &neg, &[1.0, u, -u], &pb0);
            for (a, b) in n_pos[0].k_mij.iter().zip(&n_neg[0].k_mij) {
                prop_assert_eq!(*a, -*b);
            }
            prop_assert_eq!(n_pos[0].coupling, -n_neg[0].coupling);
            prop_assert_eq!(k_pos, k_neg);
            let (t_pos, w_pos) = nn_adaptive_rates(&c.nn, 10.0, &x, &e, &[100.0, 200.5]);
            let (t_neg, w_neg) = nn_adaptive_rates(&c.nn, 10.0, &x, &neg, &[100.0, 200.5]);
            for (a, b) in t_pos.iter().chain(&w_pos).zip(t_neg.iter().chain(&w_neg)) {
                prop_assert_eq!(*a, -*b);
            }
        }

        #[test]
        fn basis_entries_in_unit_interval(
            seed in 0u64..1000,
            x in proptest::array::uniform2(-30.0..30.0f64),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nn = NeuralApprox::random(2, 6, 1.0, vec![1.0; 6], 0.3, &mut rng);
            let phi = sigmoid_basis(&nn, &x);
            prop_assert_eq!(phi[0], 1.0);
            prop_assert!(phi.iter().all(|&p| p > 0.0 && p <= 1.0));
        }

        #[test]
        fn control_is_deterministic(seed in 0u64..1000) {
            let g = GraphTopology::from_edges(2, &[[0, 1], [0, 2], [1, 2]]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_controller(&mut rng, &g, 2, InputMode::Communicated);
            let states: [&[f64]; 3] = [&[0.1, 0.2], &[0.3, -0.4], &[1.0, 2.0]];
            let a = follower_control_communicated(&c, &g, &states, &[None, Some(0.5), None], 1.0).unwrap();
            let b = follower_control_communicated(&c, &g, &states, &[None, Some(0.5), None], 1.0).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
