//! Ideal matching gains, the Lyapunov design equation and the ultimate error
//! bound.
//!
//! Everything here uses the true plant matrices, which the adaptive
//! controllers never see. The simulator uses it for ground truth and
//! diagnostics only.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::plant::{is_hurwitz, AgentPlant, ReferenceModel};

/// Residual above which a matching problem is declared infeasible.
pub const MATCHING_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchingError {
    #[error("matching conditions infeasible (residual {residual:.3e})")]
    InfeasibleMatching { residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input vector is zero")]
    ZeroInput,
    #[error("matrix is not Hurwitz")]
    NotHurwitz,
    #[error("Q is not positive definite")]
    NotPositiveDefinite,
    #[error("Lyapunov operator is singular")]
    SolverSingular,
}

/// `k_m_star` and `k_r_star` such that `A_target = A + b k_m_starᵀ` and
/// `b_target = b k_r_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingGains {
    pub k_m_star: DVector<f64>,
    pub k_r_star: f64,
    /// Largest absolute residual of both conditions.
    pub residual: f64,
}

/// Solves `target_a = a + b kᵀ`, `target_b = b k_r` in the least-squares
/// sense over the rows where `b` is nonzero, then checks every row.
fn solve_matching(
    target_a: &DMatrix<f64>,
    target_b: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<MatchingGains, MatchingError> {
    let n = a.nrows();
    if target_a.shape() != (n, n) || a.ncols() != n {
        return Err(MatchingError::DimensionMismatch {
            expected: n,
            got: target_a.nrows(),
        });
    }
    if b.len() != n || target_b.len() != n {
        return Err(MatchingError::DimensionMismatch {
            expected: n,
            got: b.len().min(target_b.len()),
        });
    }
    let bb = b.dot(b);
    if bb == 0.0 {
        return Err(MatchingError::ZeroInput);
    }
    let diff = target_a - a;
    // Rows with b_r = 0 contribute nothing to the normal equations.
    let k_m_star = diff.transpose() * b / bb;
    let k_r_star = b.dot(target_b) / bb;

    let state_residual = (&diff - b * k_m_star.transpose()).amax();
    let input_residual = (target_b - b * k_r_star).amax();
    let residual = state_residual.max(input_residual);
    if residual > MATCHING_TOLERANCE {
        return Err(MatchingError::InfeasibleMatching { residual });
    }
    Ok(MatchingGains {
        k_m_star,
        k_r_star,
        residual,
    })
}

/// Feedback matching: `A0 = A_i + b_i k*ᵀ`, `b0 = b_i k*_r`.
pub fn feedback_matching(
    reference: &ReferenceModel,
    plant: &AgentPlant,
) -> Result<MatchingGains, MatchingError> {
    solve_matching(&reference.a, &reference.b, &plant.a, &plant.b)
}

/// Coupling matching: `A_i = A_j + b_j k*ᵀ`, `b_i = b_j k*_r`.
///
/// Follower `i` listening to `j` replicates `j` through the gains returned by
/// `coupling_matching(plant_j, plant_i)`.
pub fn coupling_matching(
    plant_i: &AgentPlant,
    plant_j: &AgentPlant,
) -> Result<MatchingGains, MatchingError> {
    solve_matching(&plant_i.a, &plant_i.b, &plant_j.a, &plant_j.b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl LyapunovCertificate {
    /// `‖P A0 + A0ᵀ P + Q‖_∞` (max absolute entry).
    pub fn residual(&self, a0: &DMatrix<f64>) -> f64 {
        (&self.p * a0 + a0.transpose() * &self.p + &self.q).amax()
    }

    pub fn lambda_min_q(&self) -> f64 {
        min_eigenvalue(&self.q)
    }

    pub fn lambda_min_p(&self) -> f64 {
        min_eigenvalue(&self.p)
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    symmetrize(sym)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && m.nrows() > 0 && min_eigenvalue(m) > 0.0
}

/// Unique symmetric `P` with `P A0 + A0ᵀ P = -Q`, via the vectorized
/// Kronecker system `(I ⊗ A0ᵀ + A0ᵀ ⊗ I) vec(P) = -vec(Q)`.
pub fn solve_lyapunov(
    a0: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<LyapunovCertificate, MatchingError> {
    let n = a0.nrows();
    if a0.ncols() != n || q.shape() != (n, n) {
        return Err(MatchingError::DimensionMismatch {
            expected: n,
            got: q.nrows(),
        });
    }
    if !is_hurwitz(a0) {
        return Err(MatchingError::NotHurwitz);
    }
    let q = symmetrize(q);
    if !is_positive_definite(&q) {
        return Err(MatchingError::NotPositiveDefinite);
    }

    let at = a0.transpose();
    let mut op = DMatrix::<f64>::zeros(n * n, n * n);
    // vec is column-major: vec(P)[c * n + r] = P[(r, c)].
    // (A0ᵀ P)[(r, c)] = Σ_k A0ᵀ[(r, k)] P[(k, c)]
    // (P A0)[(r, c)]  = Σ_k P[(r, k)] A0[(k, c)] = Σ_k A0ᵀ[(c, k)] P[(r, k)]
    for c in 0..n {
        for r in 0..n {
            let row = c * n + r;
            for k in 0..n {
                op[(row, c * n + k)] += at[(r, k)];
                op[(row, k * n + r)] += at[(c, k)];
            }
        }
    }
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = op.lu().solve(&rhs).ok_or(MatchingError::SolverSingular)?;
    let p = symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice()));
    Ok(LyapunovCertificate { p, q })
}

/// Radius `2 ‖P b‖ ε0 / λ_min(Q)` of the ball the synchronization error
/// settles into when the approximation residual is bounded by `eps0`.
pub fn ultimate_bound(cert: &LyapunovCertificate, b: &DVector<f64>, eps0: f64) -> f64 {
    2.0 * (&cert.p * b).norm() * eps0 / cert.lambda_min_q()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{vehicle_matrix, vehicle_plant, ReferenceSignal, Uncertainty};
    use approx::assert_abs_diff_eq;

    const TABLE: [(f64, f64, f64, [f64; 2]); 6] = [
        (-1.25, 1.0, 0.5, [1.0, 0.0]),
        (-0.5, 2.5, 0.75, [-1.0, 0.5]),
        (-0.75, 2.0, 1.5, [1.0, 0.0]),
        (-1.5, 2.5, 1.0, [-1.0, 1.0]),
        (-1.0, 2.0, 1.0, [-0.5, 1.0]),
        (-0.75, 1.0, 0.5, [0.0, -1.0]),
    ];

    fn reference() -> ReferenceModel {
        ReferenceModel::new(
            vehicle_matrix(-0.25, -0.5),
            DVector::from_vec(vec![0.0, 1.0]),
            ReferenceSignal::constant(1.0),
            DVector::from_vec(vec![1.0, -1.0]),
        )
        .unwrap()
    }

    fn table_plant(k: usize) -> AgentPlant {
        let (a1, a2, b1, x0) = TABLE[k];
        vehicle_plant(a1, a2, b1, Uncertainty::None, x0).unwrap()
    }

    // Independent route: row 2 of the vehicle structure divided by b1.
    fn hand_feedback(k: usize) -> ([f64; 2], f64) {
        let (a1, a2, b1, _) = TABLE[k];
        ([(-0.25 - a1) / b1, (-0.5 - a2) / b1], 1.0 / b1)
    }

    #[test]
    fn agent_one_feedback_gains() {
        let g = feedback_matching(&reference(), &table_plant(0)).unwrap();
        assert_abs_diff_eq!(g.k_m_star[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.k_m_star[1], -3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.k_r_star, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn every_platoon_agent_reconstructs_the_reference() {
        let r = reference();
        for k in 0..TABLE.len() {
            let p = table_plant(k);
            let g = feedback_matching(&r, &p).unwrap();
            let (km, kr) = hand_feedback(k);
            assert_abs_diff_eq!(g.k_m_star[0], km[0], epsilon = 1e-12);
            assert_abs_diff_eq!(g.k_m_star[1], km[1], epsilon = 1e-12);
            assert_abs_diff_eq!(g.k_r_star, kr, epsilon = 1e-12);
            let rebuilt = &p.a + &p.b * g.k_m_star.transpose();
            assert!((&r.a - rebuilt).amax() < 1e-10);
            assert!((&r.b - &p.b * g.k_r_star).amax() < 1e-12);
        }
    }

    #[test]
    fn identical_plant_needs_no_correction() {
        let r = reference();
        let p = AgentPlant::new(r.a.clone(), r.b.clone(), Uncertainty::None, r.x0.clone()).unwrap();
        let g = feedback_matching(&r, &p).unwrap();
        assert_eq!(g.k_m_star, DVector::zeros(2));
        assert_eq!(g.k_r_star, 1.0);
        let g = coupling_matching(&p, &p).unwrap();
        assert_eq!(g.k_m_star, DVector::zeros(2));
        assert_eq!(g.k_r_star, 1.0);
    }

    #[test]
    fn non_collinear_inputs_are_infeasible() {
        let r = reference();
        let p = AgentPlant::new(
            r.a.clone(),
            DVector::from_vec(vec![1.0, 0.0]),
            Uncertainty::None,
            DVector::zeros(2),
        )
        .unwrap();
        assert!(matches!(
            feedback_matching(&r, &p),
            Err(MatchingError::InfeasibleMatching { .. })
        ));
    }

    #[test]
    fn structural_mismatch_in_first_row_is_infeasible() {
        let r = reference();
        let p = AgentPlant::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -1.0, 1.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            Uncertainty::None,
            DVector::zeros(2),
        )
        .unwrap();
        match feedback_matching(&r, &p) {
            Err(MatchingError::InfeasibleMatching { residual }) => assert_eq!(residual, 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coupling_between_agents_one_and_two() {
        let g = coupling_matching(&table_plant(0), &table_plant(1)).unwrap();
        assert_abs_diff_eq!(g.k_m_star[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.k_m_star[1], -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.k_r_star, 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn two_hop_reconstruction() {
        // j -> i: A_i = A_j + b_j k_jiᵀ, then A_0 = A_i + b_i k_iᵀ.
        let r = reference();
        for k in 0..TABLE.len() - 1 {
            let (pj, pi) = (table_plant(k), table_plant(k + 1));
            let hop = coupling_matching(&pi, &pj).unwrap();
            let fb = feedback_matching(&r, &pi).unwrap();
            let through_i = &pj.a + &pj.b * hop.k_m_star.transpose() + &pi.b * fb.k_m_star.transpose();
            assert!((&r.a - through_i).amax() < 1e-10);
            assert!((&r.b - &pj.b * (hop.k_r_star * fb.k_r_star)).amax() < 1e-12);
            // Same result as matching j directly.
            let direct = feedback_matching(&r, &pj).unwrap();
            let composed = &hop.k_m_star + &fb.k_m_star * hop.k_r_star;
            assert!((&direct.k_m_star - composed).amax() < 1e-10);
            assert_abs_diff_eq!(direct.k_r_star, hop.k_r_star * fb.k_r_star, epsilon = 1e-12);
        }
    }

    #[test]
    fn lyapunov_identity_cases() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let cert = solve_lyapunov(&a, &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert!((&cert.p - DMatrix::identity(2, 2)).amax() < 1e-14);

        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let cert = solve_lyapunov(&a, &q).unwrap();
        assert!((&cert.p - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn lyapunov_for_reference_model() {
        let r = reference();
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 1.0]));
        let cert = solve_lyapunov(&r.a, &q).unwrap();
        assert!(cert.residual(&r.a) < 1e-10);
        assert_eq!(cert.p, cert.p.transpose());
        assert!(cert.lambda_min_p() > 0.0);
        // Closed form for the companion structure, derived by hand:
        // p11 = 200.25, p12 = 200, p22 = 401.
        assert_abs_diff_eq!(cert.p[(0, 0)], 200.25, epsilon = 1e-9);
        assert_abs_diff_eq!(cert.p[(0, 1)], 200.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cert.p[(1, 1)], 401.0, epsilon = 1e-9);
    }

    #[test]
    fn lyapunov_rejects_bad_inputs() {
        let unstable = vehicle_matrix(-1.25, 1.0);
        assert_eq!(
            solve_lyapunov(&unstable, &DMatrix::identity(2, 2)),
            Err(MatchingError::NotHurwitz)
        );
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0]));
        assert_eq!(
            solve_lyapunov(&vehicle_matrix(-0.25, -0.5), &q),
            Err(MatchingError::NotPositiveDefinite)
        );
    }

    #[test]
    fn lyapunov_ignores_tiny_asymmetry() {
        let a = vehicle_matrix(-0.25, -0.5);
        let q = DMatrix::from_row_slice(2, 2, &[100.0, 0.0, 0.0, 1.0]);
        let noisy = DMatrix::from_row_slice(2, 2, &[100.0, 5e-13, -5e-13, 1.0]);
        let clean = solve_lyapunov(&a, &q).unwrap();
        let other = solve_lyapunov(&a, &noisy).unwrap();
        assert!((&clean.p - &other.p).amax() < 1e-10);
    }

    #[test]
    fn ultimate_bound_examples() {
        let cert = LyapunovCertificate {
            p: DMatrix::identity(2, 2),
            q: DMatrix::identity(2, 2),
        };
        let b = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(ultimate_bound(&cert, &b, 0.0), 0.0);
        assert_abs_diff_eq!(ultimate_bound(&cert, &b, 0.5), 1.0, epsilon = 1e-15);

        let r = reference();
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 1.0]));
        let cert = solve_lyapunov(&r.a, &q).unwrap();
        let bound = ultimate_bound(&cert, &table_plant(0).b, 0.05);
        assert!(bound.is_finite() && bound > 0.0);
    }
}
