//! Conjugate gradients for `(L_W + Λ)ψ = b` and the adjoint gradients of the
//! solution.
//!
//! Given `ψ* = A⁻¹b` and an upstream gradient `g = ∂L/∂ψ*`, one extra solve
//! `v = A⁻¹g` yields every parameter gradient in closed form:
//!
//! ```text
//! ∂L/∂b      = v
//! ∂L/∂w_ij   = −(v_i − v_j)(ψ*_i − ψ*_j)
//! ∂L/∂λ_i    = −v_i ψ*_i
//! ```
//!
//! No iterate of the forward solve is stored; memory is `O(n)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Var;
use crate::graph::{GraphError, GraphTopology, ScreenedSystem};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CgError {
    #[error("CG did not converge in {iterations} iterations (relative residual {rel_residual:e})")]
    NonConvergence {
        iterations: usize,
        rel_residual: f64,
    },
    #[error("non-finite value during CG at iteration {iteration}")]
    Numeric { iteration: usize },
    #[error("field {index}: {source}")]
    Field {
        index: usize,
        #[source]
        source: Box<CgError>,
    },
    #[error("systems must share topology and conductances: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Diagonal preconditioning.
    #[serde(default)]
    pub jacobi: bool,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iters: 60,
            rel_tol: 1e-10,
            abs_floor: 1e-30,
            jacobi: false,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<(), CgError> {
        if self.max_iters == 0 || !(self.rel_tol > 0.0) || !(self.abs_floor > 0.0) {
            return Err(CgError::Mismatch(format!("invalid CG config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveRecord {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖Aψ − b‖ / max(‖b‖, floor)` recomputed from the returned solution.
    pub rel_residual: f64,
    /// Adjoint `v = A⁻¹g`, filled in by a backward solve.
    pub adjoint: Option<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `Aψ = b` from a zero initial guess.
pub fn cg_solve(sys: &ScreenedSystem, b: &[f64], cfg: &CgConfig) -> Result<SolveRecord, CgError> {
    cfg.validate()?;
    let n = sys.n_nodes();
    if b.len() != n {
        return Err(GraphError::Dimension(format!("rhs length {} for {n} nodes", b.len())).into());
    }
    let scale = norm(b).max(cfg.abs_floor);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let inv_diag: Option<Vec<f64>> = cfg
        .jacobi
        .then(|| sys.diagonal().iter().map(|d| 1.0 / d).collect());
    let precondition = |r: &[f64], z: &mut Vec<f64>| match &inv_diag {
        Some(m) => {
            z.clear();
            z.extend(r.iter().zip(m).map(|(a, b)| a * b));
        }
        None => {
            z.clear();
            z.extend_from_slice(r);
        }
    };

    let mut rel = norm(&r) / scale;
    if rel <= cfg.rel_tol {
        return Ok(SolveRecord {
            solution: x,
            iterations: 0,
            rel_residual: rel,
            adjoint: None,
        });
    }

    let mut z = Vec::with_capacity(n);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    // Outer loop restarts from the true residual if the recursive one drifted.
    while iterations < cfg.max_iters {
        precondition(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < cfg.max_iters {
            iterations += 1;
            sys.apply_into(&p, &mut ap)?;
            let pap = dot(&p, &ap);
            if !pap.is_finite() || !rz.is_finite() {
                return Err(CgError::Numeric {
                    iteration: iterations,
                });
            }
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
                *xi += alpha * pi;
                *ri -= alpha * api;
            }
            rel = norm(&r) / scale;
            if !rel.is_finite() {
                return Err(CgError::Numeric {
                    iteration: iterations,
                });
            }
            if rel <= cfg.rel_tol {
                break;
            }
            precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        // True residual.
        sys.apply_into(&x, &mut ap)?;
        for ((ri, bi), ai) in r.iter_mut().zip(b).zip(&ap) {
            *ri = bi - ai;
        }
        rel = norm(&r) / scale;
        if rel <= cfg.rel_tol {
            return Ok(SolveRecord {
                solution: x,
                iterations,
                rel_residual: rel,
                adjoint: None,
            });
        }
    }
    Err(CgError::NonConvergence {
        iterations,
        rel_residual: rel,
    })
}

/// Parameter gradients of one solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveGrad {
    pub grad_b: Vec<f64>,
    pub grad_w: Vec<f64>,
    pub grad_lambda: Vec<f64>,
}

/// Adjoint gradients for `ψ* = A⁻¹b`; `record.adjoint` receives `v`.
pub fn cg_solve_grad(
    sys: &ScreenedSystem,
    record: &mut SolveRecord,
    upstream: &[f64],
    cfg: &CgConfig,
) -> Result<SolveGrad, CgError> {
    let psi = &record.solution;
    let v = cg_solve(sys, upstream, cfg)?.solution;
    let topo = sys.topology();
    let grad_w = topo
        .edges()
        .map(|(i, j)| -(v[i] - v[j]) * (psi[i] - psi[j]))
        .collect();
    let grad_lambda = v.iter().zip(psi).map(|(vi, pi)| -vi * pi).collect();
    record.adjoint = Some(v.clone());
    Ok(SolveGrad {
        grad_b: v,
        grad_w,
        grad_lambda,
    })
}

fn check_shared(systems: &[ScreenedSystem]) -> Result<(), CgError> {
    if let Some(first) = systems.first() {
        for (k, s) in systems.iter().enumerate().skip(1) {
            let same_topo =
                Arc::ptr_eq(s.topology(), first.topology()) || s.topology() == first.topology();
            let same_w = Arc::ptr_eq(s.conductances(), first.conductances())
                || s.conductances() == first.conductances();
            if !same_topo || !same_w {
                return Err(CgError::Mismatch(format!("field {k} differs from field 0")));
            }
        }
    }
    Ok(())
}

/// Solves `K` fields sharing topology and conductances, in parallel.
pub fn solve_k_fields(
    systems: &[ScreenedSystem],
    rhs: &[Vec<f64>],
    cfg: &CgConfig,
) -> Result<Vec<SolveRecord>, CgError> {
    check_shared(systems)?;
    if systems.len() != rhs.len() {
        return Err(CgError::Mismatch(format!(
            "{} systems for {} right-hand sides",
            systems.len(),
            rhs.len()
        )));
    }
    systems
        .par_iter()
        .zip(rhs.par_iter())
        .enumerate()
        .map(|(k, (s, b))| {
            cg_solve(s, b, cfg).map_err(|e| CgError::Field {
                index: k,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Same contract as [`solve_k_fields`], one field after another.
pub fn solve_k_fields_sequential(
    systems: &[ScreenedSystem],
    rhs: &[Vec<f64>],
    cfg: &CgConfig,
) -> Result<Vec<SolveRecord>, CgError> {
    check_shared(systems)?;
    systems
        .iter()
        .zip(rhs)
        .enumerate()
        .map(|(k, (s, b))| {
            cg_solve(s, b, cfg).map_err(|e| CgError::Field {
                index: k,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Differentiable K-field screened Poisson solve.
///
/// `w` is `E × 1` (shared across fields), `lambda` and `b` are `N × K`.
/// Returns `ψ` as `N × K` along with the per-field forward records. The
/// backward pass runs one adjoint CG per field with the same config.
pub fn poisson_solve<'t>(
    topology: &Arc<GraphTopology>,
    w: Var<'t>,
    lambda: Var<'t>,
    b: Var<'t>,
    cfg: &CgConfig,
) -> Result<(Var<'t>, Vec<SolveRecord>), CgError> {
    let wv = w.value();
    let lv = lambda.value();
    let bv = b.value();
    let n = topology.n_nodes();
    let (ln, k) = lv.dims2()?;
    if ln != n || bv.shape() != lv.shape() || wv.len() != topology.n_edges() {
        return Err(CgError::Mismatch(format!(
            "w {:?}, lambda {:?}, b {:?} for {} nodes / {} edges",
            wv.shape(),
            lv.shape(),
            bv.shape(),
            n,
            topology.n_edges()
        )));
    }
    let w_shared: Arc<[f64]> = wv.data().into();
    let systems = (0..k)
        .map(|f| ScreenedSystem::new(Arc::clone(topology), Arc::clone(&w_shared), lv.col(f)))
        .collect::<Result<Vec<_>, _>>()?;
    let rhs: Vec<Vec<f64>> = (0..k).map(|f| bv.col(f)).collect();
    let records = solve_k_fields(&systems, &rhs, cfg)?;
    let mut psi = Tensor::zeros(&[n, k]);
    for (f, rec) in records.iter().enumerate() {
        for (i, &x) in rec.solution.iter().enumerate() {
            psi.set(i, f, x);
        }
    }
    let cfg = *cfg;
    let saved = records.clone();
    let (w_shape, l_shape) = (wv.shape().to_vec(), lv.shape().to_vec());
    let out = w
        .tape()
        .custom("poisson_solve", &[w, lambda, b], psi, move |g| {
            let grads = systems
                .par_iter()
                .zip(saved.par_iter())
                .enumerate()
                .map(|(f, (s, rec))| {
                    let mut rec = rec.clone();
                    cg_solve_grad(s, &mut rec, &g.col(f), &cfg).map_err(|e| TensorError::Numeric {
                        op: "poisson_solve",
                        detail: format!("adjoint solve of field {f}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut gw = vec![0.0; w_shape.iter().product()];
            let mut gl = Tensor::zeros(&l_shape);
            let mut gb = Tensor::zeros(&l_shape);
            for (f, sg) in grads.iter().enumerate() {
                for (a, d) in gw.iter_mut().zip(&sg.grad_w) {
                    *a += d;
                }
                for i in 0..n {
                    gl.set(i, f, sg.grad_lambda[i]);
                    gb.set(i, f, sg.grad_b[i]);
                }
            }
            Ok(vec![Tensor::new(w_shape.clone(), gw)?, gl, gb])
        });
    Ok((out, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> ScreenedSystem {
        let t = Arc::new(GraphTopology::new(2, &[(0, 1)]).unwrap());
        ScreenedSystem::new(t, vec![1.0].into(), vec![2.0, 2.0]).unwrap()
    }

    #[test]
    fn two_node_solution() {
        let rec = cg_solve(&two_node(), &[1.0, 0.0], &CgConfig::default()).unwrap();
        assert!((rec.solution[0] - 0.375).abs() < 1e-12);
        assert!((rec.solution[1] - 0.125).abs() < 1e-12);
        assert!(rec.rel_residual <= 1e-10);
    }

    #[test]
    fn zero_rhs_takes_zero_iterations() {
        let rec = cg_solve(&two_node(), &[0.0, 0.0], &CgConfig::default()).unwrap();
        assert_eq!(rec.iterations, 0);
        assert_eq!(rec.solution, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let sys = two_node();
        let mut rec = cg_solve(&sys, &[1.0, 0.0], &CgConfig::default()).unwrap();
        let g = cg_solve_grad(&sys, &mut rec, &[0.0, 0.0], &CgConfig::default()).unwrap();
        assert!(g
            .grad_b
            .iter()
            .chain(&g.grad_w)
            .chain(&g.grad_lambda)
            .all(|&x| x == 0.0));
    }

    #[test]
    fn non_convergence_is_reported() {
        let t = Arc::new(crate::graph::grid_topology(10, 10, 4).unwrap());
        let w: Arc<[f64]> = vec![1.0; t.n_edges()].into();
        let sys = ScreenedSystem::new(t, w, vec![1e-3; 100]).unwrap();
        let mut b = vec![0.0; 100];
        b[0] = 1.0;
        let cfg = CgConfig {
            max_iters: 3,
            ..CgConfig::default()
        };
        assert!(matches!(
            cg_solve(&sys, &b, &cfg),
            Err(CgError::NonConvergence { iterations: 3, .. })
        ));
    }

    #[test]
    fn mismatched_fields_rejected() {
        let a = two_node();
        let t = Arc::new(GraphTopology::new(2, &[(0, 1)]).unwrap());
        let b = ScreenedSystem::new(t, vec![2.0].into(), vec![2.0, 2.0]).unwrap();
        let rhs = vec![vec![1.0, 0.0]; 2];
        assert!(matches!(
            solve_k_fields(&[a, b], &rhs, &CgConfig::default()),
            Err(CgError::Mismatch(_))
        ));
    }
}
