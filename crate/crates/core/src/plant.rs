//! Agent and reference-model dynamics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input gain is zero")]
    ZeroGain,
    #[error("reference model is not Hurwitz (eigenvalue with real part {0})")]
    NotHurwitz(f64),
}

/// Structured input uncertainty `f(x)` entering through the input channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Uncertainty {
    #[default]
    None,
    /// `c1 sin(x_1) + c2 cos(x_2)`. For a scalar state only the sine term is used.
    Sinusoidal { c1: f64, c2: f64 },
}

impl Uncertainty {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Uncertainty::None => 0.0,
            Uncertainty::Sinusoidal { c1, c2 } => {
                let second = x.get(1).map_or(0.0, |v| c2 * v.cos());
                c1 * x[0].sin() + second
            }
        }
    }

    /// Sup-norm bound `|c1| + |c2|`.
    pub fn bound(&self) -> f64 {
        match *self {
            Uncertainty::None => 0.0,
            Uncertainty::Sinusoidal { c1, c2 } => c1.abs() + c2.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPlant {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub uncertainty: Uncertainty,
    pub x0: DVector<f64>,
}

impl AgentPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        uncertainty: Uncertainty,
        x0: DVector<f64>,
    ) -> Result<Self, PlantError> {
        let n = a.nrows();
        check_dims(&a, &b, &x0)?;
        if n == 0 {
            return Err(PlantError::DimensionMismatch { expected: 1, got: 0 });
        }
        if b.iter().all(|&v| v == 0.0) {
            return Err(PlantError::ZeroGain);
        }
        Ok(Self {
            a,
            b,
            uncertainty,
            x0,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

fn check_dims(a: &DMatrix<f64>, b: &DVector<f64>, x0: &DVector<f64>) -> Result<(), PlantError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(PlantError::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    for len in [b.len(), x0.len()] {
        if len != n {
            return Err(PlantError::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    Ok(())
}

/// Piecewise-constant scalar reference `r(t)`: each `(t_start, value)` holds
/// from `t_start` until the next breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    breakpoints: Vec<(f64, f64)>,
}

impl ReferenceSignal {
    pub fn constant(value: f64) -> Self {
        Self {
            breakpoints: vec![(0.0, value)],
        }
    }

    pub fn piecewise(mut breakpoints: Vec<(f64, f64)>) -> Self {
        breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { breakpoints }
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn at(&self, t: f64) -> f64 {
        self.breakpoints
            .iter()
            .take_while(|(start, _)| *start <= t)
            .last()
            .or(self.breakpoints.first())
            .map_or(0.0, |&(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub r: ReferenceSignal,
    pub x0: DVector<f64>,
}

impl ReferenceModel {
    /// Builds the model, rejecting a non-Hurwitz `A0`.
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        r: ReferenceSignal,
        x0: DVector<f64>,
    ) -> Result<Self, PlantError> {
        check_dims(&a, &b, &x0)?;
        let abscissa = spectral_abscissa(&a);
        if abscissa >= 0.0 {
            return Err(PlantError::NotHurwitz(abscissa));
        }
        Ok(Self { a, b, r, x0 })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Largest real part over the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    spectral_abscissa(a) < 0.0
}

fn mat_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..x.len()).map(|c| a[(r, c)] * x[c]).sum();
    }
}

/// `A x + b (u + f(x))`.
pub fn agent_derivative(plant: &AgentPlant, x: &[f64], u: f64) -> Result<Vec<f64>, PlantError> {
    let n = plant.dim();
    if x.len() != n {
        return Err(PlantError::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let mut dx = vec![0.0; n];
    agent_derivative_into(plant, x, u, &mut dx);
    Ok(dx)
}

pub(crate) fn agent_derivative_into(plant: &AgentPlant, x: &[f64], u: f64, dx: &mut [f64]) {
    mat_vec(&plant.a, x, dx);
    let input = u + plant.uncertainty.eval(x);
    for (d, b) in dx.iter_mut().zip(plant.b.iter()) {
        *d += b * input;
    }
}

/// `A0 x0 + b0 r(t)`.
pub fn reference_derivative(
    reference: &ReferenceModel,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>, PlantError> {
    let n = reference.dim();
    if x.len() != n {
        return Err(PlantError::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let mut dx = vec![0.0; n];
    reference_derivative_into(reference, x, reference.r.at(t), &mut dx);
    Ok(dx)
}

pub(crate) fn reference_derivative_into(reference: &ReferenceModel, x: &[f64], r: f64, dx: &mut [f64]) {
    mat_vec(&reference.a, x, dx);
    for (d, b) in dx.iter_mut().zip(reference.b.iter()) {
        *d += b * r;
    }
}

/// Second-order longitudinal vehicle: `A = [[0, 1], [a1, a2]]`, `b = [0, b1]`.
pub fn vehicle_plant(
    a1: f64,
    a2: f64,
    b1: f64,
    uncertainty: Uncertainty,
    x0: [f64; 2],
) -> Result<AgentPlant, PlantError> {
    if b1 == 0.0 {
        return Err(PlantError::ZeroGain);
    }
    AgentPlant::new(
        vehicle_matrix(a1, a2),
        DVector::from_vec(vec![0.0, b1]),
        uncertainty,
        DVector::from_vec(x0.to_vec()),
    )
}

pub fn vehicle_matrix(a1: f64, a2: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, a1, a2])
}
