//! Scenario configuration: the TOML schema, validation and bundled presets.
//!
//! A scenario file looks like
//!
//! ```toml
//! schema = 1
//! name = "fig2"
//!
//! [reference]
//! a1 = -0.25          # or a full matrix: a = [[0.0, 1.0], [-0.25, -0.5]]
//! a2 = -0.5
//! b1 = 1.0            # or b = [0.0, 1.0]
//! x0 = [1.0, -1.0]
//! r = 1.0             # or breakpoints: r = [[0.0, 1.0], [20.0, 0.5]]
//!
//! [[agents]]
//! a1 = -1.25
//! a2 = 1.0
//! b1 = 0.5
//! x0 = [1.0, 0.0]
//! uncertainty = { kind = "sinusoidal", c1 = 0.2, c2 = 0.1 }
//! # sign_kr = 1.0, mode = "estimated" override the controller defaults
//!
//! [graph]
//! edges = [[0, 1]]
//!
//! [controller]       # every key optional, see ControllerSettings
//! gamma = 10.0
//! q = [[100.0, 0.0], [0.0, 1.0]]
//!
//! [integration]      # dt = 0.001, t_end = 40.0, method = "rk4"
//! [diagnostics]      # eps0 = 0.05, record_stride = 10, tolerance = 0.1
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerSettings, InputMode};
use crate::matching::is_positive_definite;
use crate::plant::{spectral_abscissa, vehicle_matrix, AgentPlant, ReferenceModel, ReferenceSignal, Uncertainty};
use crate::topology::GraphTopology;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationSettings {
    pub dt: f64,
    pub t_end: f64,
    pub method: Method,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        Self {
            dt: 0.001,
            t_end: 40.0,
            method: Method::Rk4,
        }
    }
}

impl IntegrationSettings {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSettings {
    /// Uniform bound on the network approximation residual.
    pub eps0: f64,
    pub record_stride: usize,
    /// Error threshold used for time-to-tolerance.
    pub tolerance: f64,
    /// Agent state norm treated as divergence.
    pub divergence_limit: f64,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        Self {
            eps0: 0.05,
            record_stride: 10,
            tolerance: 0.1,
            divergence_limit: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub plant: AgentPlant,
    pub sign_kr: f64,
    pub mode: InputMode,
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub topology: GraphTopology,
    pub reference: ReferenceModel,
    pub agents: Vec<AgentConfig>,
    pub controller: ControllerSettings,
    pub integration: IntegrationSettings,
    pub diagnostics: DiagnosticsSettings,
}

impl ScenarioConfig {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn state_dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.controller.q).expect("validated")
    }

    /// Same scenario with every agent switched to `mode`.
    pub fn with_mode(mut self, mode: InputMode) -> Self {
        self.controller.mode = mode;
        for a in self.agents.iter_mut() {
            a.mode = mode;
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.controller.seed = seed;
        self
    }

    pub fn without_uncertainty(mut self) -> Self {
        for a in self.agents.iter_mut() {
            a.plant.uncertainty = Uncertainty::None;
        }
        self
    }
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum DynamicsFile {
    Vehicle { a1: f64, a2: f64, b1: f64 },
    General { a: Vec<Vec<f64>>, b: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ReferenceInput {
    Constant(f64),
    Piecewise(Vec<(f64, f64)>),
}

impl Default for ReferenceInput {
    fn default() -> Self {
        ReferenceInput::Constant(1.0)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ReferenceFile {
    #[serde(flatten)]
    dynamics: DynamicsFile,
    x0: Vec<f64>,
    #[serde(default)]
    r: ReferenceInput,
}

#[derive(Debug, Clone, Deserialize)]
struct AgentFile {
    #[serde(flatten)]
    dynamics: DynamicsFile,
    x0: Vec<f64>,
    #[serde(default)]
    uncertainty: Uncertainty,
    sign_kr: Option<f64>,
    mode: Option<InputMode>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema: u32,
    name: Option<String>,
    reference: ReferenceFile,
    #[serde(default)]
    agents: Vec<AgentFile>,
    graph: GraphFile,
    #[serde(default)]
    controller: ControllerSettings,
    #[serde(default)]
    integration: IntegrationSettings,
    #[serde(default)]
    diagnostics: DiagnosticsSettings,
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return None;
    }
    Some(DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied()))
}

fn dynamics(d: &DynamicsFile) -> Result<(DMatrix<f64>, DVector<f64>), String> {
    match d {
        DynamicsFile::Vehicle { a1, a2, b1 } => {
            Ok((vehicle_matrix(*a1, *a2), DVector::from_vec(vec![0.0, *b1])))
        }
        DynamicsFile::General { a, b } => {
            let a = rows_to_matrix(a).ok_or("A must be a non-empty square matrix")?;
            Ok((a, DVector::from_vec(b.clone())))
        }
    }
}

fn line_column(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

/// Parses and validates scenario text, reporting every violation at once.
pub fn parse_config(source: &str) -> Result<ScenarioConfig, ConfigError> {
    let file: ScenarioFile = toml::from_str(source).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(source, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    build(file)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let source = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&source)
}

fn build(file: ScenarioFile) -> Result<ScenarioConfig, ConfigError> {
    let mut errors = Vec::new();
    if file.schema != SCHEMA_VERSION {
        errors.push(format!(
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            file.schema
        ));
    }

    let reference = match dynamics(&file.reference.dynamics) {
        Ok((a, b)) => {
            let signal = match &file.reference.r {
                ReferenceInput::Constant(v) => ReferenceSignal::constant(*v),
                ReferenceInput::Piecewise(points) => ReferenceSignal::piecewise(points.clone()),
            };
            let x0 = DVector::from_vec(file.reference.x0.clone());
            match ReferenceModel::new(a.clone(), b, signal, x0) {
                Ok(r) => Some(r),
                Err(e) => {
                    if a.is_square() && !a.is_empty() && spectral_abscissa(&a) >= 0.0 {
                        errors.push("reference model A0 is not Hurwitz".into());
                    } else {
                        errors.push(format!("reference model: {e}"));
                    }
                    None
                }
            }
        }
        Err(e) => {
            errors.push(format!("reference model: {e}"));
            None
        }
    };
    let n = reference.as_ref().map(|r| r.dim());

    let c = &file.controller;
    let mut agents = Vec::new();
    for (k, agent) in file.agents.iter().enumerate() {
        let id = k + 1;
        let plant = dynamics(&agent.dynamics).and_then(|(a, b)| {
            AgentPlant::new(a, b, agent.uncertainty, DVector::from_vec(agent.x0.clone()))
                .map_err(|e| e.to_string())
        });
        match plant {
            Ok(p) => {
                if let Some(n) = n {
                    if p.dim() != n {
                        errors.push(format!("agent {id}: state dimension {} != reference {n}", p.dim()));
                    }
                }
                let sign_kr = agent.sign_kr.unwrap_or(1.0);
                if sign_kr != 1.0 && sign_kr != -1.0 {
                    errors.push(format!("agent {id}: sign_kr must be +1 or -1"));
                }
                agents.push(AgentConfig {
                    plant: p,
                    sign_kr,
                    mode: agent.mode.unwrap_or(c.mode),
                });
            }
            Err(e) => errors.push(format!("agent {id}: {e}")),
        }
    }

    let topology = match GraphTopology::from_edges(file.agents.len(), &file.graph.edges) {
        Ok(t) => {
            if let Err(e) = t.validate() {
                errors.push(format!("graph: {e}"));
            }
            Some(t)
        }
        Err(e) => {
            errors.push(format!("graph: {e}"));
            None
        }
    };

    match rows_to_matrix(&c.q) {
        Some(q) => {
            if Some(q.nrows()) != n && n.is_some() {
                errors.push(format!("Q is {}x{}, expected {}x{}", q.nrows(), q.nrows(), n.unwrap(), n.unwrap()));
            } else if !is_positive_definite(&q) {
                errors.push("Q not positive definite".into());
            } else if (&q - q.transpose()).amax() > 1e-9 * q.amax() {
                errors.push("Q not symmetric".into());
            }
        }
        None => errors.push("Q must be a non-empty square matrix".into()),
    }
    if !(c.gamma > 0.0) {
        errors.push("gamma must be positive".into());
    }
    if c.hidden == 0 {
        errors.push("hidden width must be at least 1".into());
    }
    if !(c.slope > 0.0) {
        errors.push("sigmoid slope must be positive".into());
    }
    if c.v.len() != 1 && c.v.len() != c.hidden {
        errors.push(format!("bias vector has {} entries, expected 1 or {}", c.v.len(), c.hidden));
    }
    if !(c.init_range >= 0.0) {
        errors.push("init_range must be non-negative".into());
    }

    let i = &file.integration;
    if !(i.dt > 0.0) {
        errors.push("dt must be positive".into());
    }
    if !(i.t_end > i.dt) {
        errors.push("t_end must exceed dt".into());
    }
    let d = &file.diagnostics;
    if d.record_stride == 0 {
        errors.push("record_stride must be at least 1".into());
    }
    if !(d.eps0 >= 0.0) {
        errors.push("eps0 must be non-negative".into());
    }
    if !(d.tolerance > 0.0) {
        errors.push("tolerance must be positive".into());
    }
    if !(d.divergence_limit > 0.0) {
        errors.push("divergence_limit must be positive".into());
    }

    if !errors.is_empty() {
        return Err(ConfigError::Validation(errors));
    }
    Ok(ScenarioConfig {
        name: file.name.unwrap_or_else(|| "scenario".into()),
        topology: topology.expect("checked"),
        reference: reference.expect("checked"),
        agents,
        controller: file.controller,
        integration: file.integration,
        diagnostics: file.diagnostics,
    })
}

// ---------------------------------------------------------------------------
// Presets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PresetId {
    /// Vehicle platoon, transmitted inputs.
    Fig2,
    /// Vehicle platoon, estimated inputs.
    Fig3,
    /// Lead vehicle alone against the reference.
    SingleAgentProp1,
    /// Identical follower pair with preloaded ideal gains.
    HomogeneousSanity,
    /// Uncontrolled followers and a zero-input reference.
    OpenLoopCheck,
}

impl PresetId {
    pub const ALL: [PresetId; 5] = [
        PresetId::Fig2,
        PresetId::Fig3,
        PresetId::SingleAgentProp1,
        PresetId::HomogeneousSanity,
        PresetId::OpenLoopCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetId::Fig2 => "fig2",
            PresetId::Fig3 => "fig3",
            PresetId::SingleAgentProp1 => "single-agent-prop1",
            PresetId::HomogeneousSanity => "homogeneous-sanity",
            PresetId::OpenLoopCheck => "open-loop-check",
        }
    }

    /// The bundled scenario file.
    pub fn source(self) -> &'static str {
        match self {
            PresetId::Fig2 => include_str!("../presets/fig2.toml"),
            PresetId::Fig3 => include_str!("../presets/fig3.toml"),
            PresetId::SingleAgentProp1 => include_str!("../presets/single-agent-prop1.toml"),
            PresetId::HomogeneousSanity => include_str!("../presets/homogeneous-sanity.toml"),
            PresetId::OpenLoopCheck => include_str!("../presets/open-loop-check.toml"),
        }
    }

    pub fn config(self) -> ScenarioConfig {
        parse_config(self.source()).expect("bundled presets are valid")
    }
}

impl fmt::Display for PresetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetId {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PresetId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ConfigError::UnknownPreset(s.to_string()))
    }
}
