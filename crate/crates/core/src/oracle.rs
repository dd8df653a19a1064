//! Dense-solve and energy-minimality checks of the CG solver on random
//! systems, as run by the `oracle` command.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cg::{solve_k_fields, CgConfig, CgError};
use crate::gradcheck::random_topology;
use crate::graph::{assemble_dense, dirichlet_energy, GraphError, ScreenedSystem};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Cg(#[from] CgError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("dense factorization failed for system {0}")]
    Dense(usize),
}

/// `K` random systems sharing one topology and conductances, plus one rhs
/// per field.
pub struct RandomSystems {
    pub systems: Vec<ScreenedSystem>,
    pub rhs: Vec<Vec<f64>>,
}

/// Connected graph with `n` nodes, `w ∈ [0.1, 3]`, `λ ∈ [0.01, 2]`,
/// `b ∈ [−1, 1]`.
pub fn random_systems(
    n: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RandomSystems, GraphError> {
    let extra = rng.gen_range(0..=n);
    let topo = Arc::new(random_topology(n, extra, rng)?);
    let w: Arc<[f64]> = (0..topo.n_edges())
        .map(|_| rng.gen_range(0.1..3.0))
        .collect();
    let mut systems = Vec::with_capacity(k);
    let mut rhs = Vec::with_capacity(k);
    for _ in 0..k {
        let lambda = (0..n).map(|_| rng.gen_range(0.01..2.0)).collect();
        systems.push(ScreenedSystem::new(
            Arc::clone(&topo),
            Arc::clone(&w),
            lambda,
        )?);
        rhs.push((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    Ok(RandomSystems { systems, rhs })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverOracleReport {
    pub systems: usize,
    pub fields: usize,
    /// `max ‖ψ_cg − ψ_dense‖ / ‖ψ_dense‖` over every field.
    pub worst_rel_error: f64,
    pub worst_iterations_over_n: i64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Solves `count` random systems (`n ≤ max_n`, `K ≤ max_k`) by CG and by
/// dense Cholesky and compares.
pub fn solver_oracle(
    seed: u64,
    count: usize,
    max_n: usize,
    max_k: usize,
    tolerance: f64,
) -> Result<SolverOracleReport, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut worst_iters = i64::MIN;
    let mut fields = 0;
    for s in 0..count {
        let n = rng.gen_range(2..=max_n.max(2));
        let k = rng.gen_range(1..=max_k.max(1));
        let rs = random_systems(n, k, &mut rng)?;
        let cfg = CgConfig {
            max_iters: n + 5,
            rel_tol: 1e-12,
            abs_floor: 1e-30,
            jacobi: false,
        };
        let records = solve_k_fields(&rs.systems, &rs.rhs, &cfg)?;
        for ((sys, b), rec) in rs.systems.iter().zip(&rs.rhs).zip(&records) {
            let a = assemble_dense(sys, n)?;
            let chol = a.cholesky().ok_or(OracleError::Dense(s))?;
            let exact = chol.solve(&nalgebra::DVector::from_column_slice(b));
            let diff: f64 = rec
                .solution
                .iter()
                .zip(exact.iter())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(diff / exact.norm().max(1e-300));
            worst_iters = worst_iters.max(rec.iterations as i64 - n as i64);
            fields += 1;
        }
    }
    Ok(SolverOracleReport {
        systems: count,
        fields,
        worst_rel_error: worst,
        worst_iterations_over_n: worst_iters,
        tolerance,
        passed: worst <= tolerance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimalityReport {
    pub systems: usize,
    pub perturbations: usize,
    /// Perturbations whose energy was not strictly above the solution's.
    pub violations: usize,
    /// Smallest `E(ψ*+δ) − E(ψ*)` seen.
    pub min_gap: f64,
    pub passed: bool,
}

/// Energy at the CG solution against `perturbations` random `δ` per system.
pub fn minimality_check(
    seed: u64,
    count: usize,
    perturbations: usize,
    max_n: usize,
) -> Result<MinimalityReport, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for _ in 0..count {
        let n = rng.gen_range(2..=max_n.max(2));
        let rs = random_systems(n, 1, &mut rng)?;
        let (sys, b) = (&rs.systems[0], &rs.rhs[0]);
        let cfg = CgConfig {
            max_iters: n + 5,
            rel_tol: 1e-12,
            abs_floor: 1e-30,
            jacobi: false,
        };
        let psi = crate::cg::cg_solve(sys, b, &cfg)?.solution;
        let e0 = dirichlet_energy(sys, &psi, b)?;
        for _ in 0..perturbations {
            let scale = 10f64.powf(rng.gen_range(-3.0..0.0));
            let moved: Vec<f64> = psi
                .iter()
                .map(|p| p + scale * rng.gen_range(-1.0..1.0))
                .collect();
            let gap = dirichlet_energy(sys, &moved, b)? - e0;
            min_gap = min_gap.min(gap);
            if gap <= 0.0 {
                violations += 1;
            }
        }
    }
    Ok(MinimalityReport {
        systems: count,
        perturbations,
        violations,
        min_gap,
        passed: violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_oracle_run_passes() {
        let r = solver_oracle(1, 5, 30, 2, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
        let m = minimality_check(1, 3, 10, 20).unwrap();
        assert!(m.passed, "{m:?}");
    }
}
