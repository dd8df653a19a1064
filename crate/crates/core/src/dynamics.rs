//! Explicit Euler metriplectic field dynamics on image grids.
//!
//! ```text
//! ψ ← ψ + dt·[ −σ⊙Lψ + α⊙(J_anti ψ) − γ⊙ψ + s ]
//! ```
//!
//! `L` is a learned depthwise 3×3 stencil initialized to the
//! positive-semidefinite 5-point Laplacian, so `−σ⊙Lψ` diffuses for `σ ≥ 0`.
//! `J_anti = J − Jᵀ` acts per pixel across the field axis; the elementwise
//! gain `α` is applied after the matrix product.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{softplus_f64, Var};
use crate::graph::{dirichlet_energy, GraphError, ScreenedSystem};
use crate::params::{BoundParams, ModelParams, ParamError};
use crate::stencil::{conv3x3, conv3x3_var, repeat_kernel, Grid2, LAPLACIAN5};
use crate::tensor::{Tensor, TensorError};

pub const GAMMA_FLOOR: f64 = 0.1;
pub const SOURCE_CLAMP: f64 = 5.0;
pub const DEFAULT_DT: f64 = 0.1;
/// Singular values above this count toward the rank of `J_anti`.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite {term} term at pixel {pixel}, field {field}")]
    Numeric {
        term: &'static str,
        pixel: usize,
        field: usize,
    },
    #[error("substep {substep}: {source}")]
    Substep {
        substep: usize,
        #[source]
        source: Box<DynamicsError>,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Per-pixel, per-field operator coefficients, each `P × K`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorCoeffs {
    pub sigma: Tensor,
    pub alpha: Tensor,
    pub gamma: Tensor,
    pub s: Tensor,
}

impl OperatorCoeffs {
    pub fn zeros(p: usize, k: usize) -> Self {
        Self {
            sigma: Tensor::zeros(&[p, k]),
            alpha: Tensor::zeros(&[p, k]),
            gamma: Tensor::zeros(&[p, k]),
            s: Tensor::zeros(&[p, k]),
        }
    }

    /// Pure advection with a uniform gain.
    pub fn advection(p: usize, k: usize, alpha: f64) -> Self {
        Self {
            alpha: Tensor::full(&[p, k], alpha),
            ..Self::zeros(p, k)
        }
    }
}

/// `J − Jᵀ`, computed entrywise so the result is skew bit for bit.
pub fn antisymmetrize(j_raw: &Tensor) -> Result<Tensor, TensorError> {
    let t = j_raw.transpose()?;
    j_raw.zip_map(&t, |a, b| a - b)
}

/// Per-pixel `J ψ_p`, i.e. the row product `ψ Jᵀ`.
pub fn apply_poisson(psi: &Tensor, j_anti: &Tensor) -> Result<Tensor, TensorError> {
    psi.matmul(&j_anti.transpose()?)
}

/// Names of the projection heads in [`ModelParams`].
pub const HEADS: [&str; 5] = ["psi", "sigma", "alpha", "gamma", "s"];

/// Operator-from-input projections, `J` and the stencil.
#[derive(Clone, Debug)]
pub struct DynamicsHeads {
    prefix: String,
    pub feature_dim: usize,
    pub fields: usize,
}

impl DynamicsHeads {
    /// Registers five `d × K` projections with zero biases, `J` (`K × K`)
    /// and a `K × 9` stencil initialized to the 5-point Laplacian.
    pub fn register(
        params: &mut ModelParams,
        prefix: &str,
        feature_dim: usize,
        fields: usize,
    ) -> Result<Self, ParamError> {
        for head in HEADS {
            params.insert_glorot(&format!("{prefix}.{head}.w"), feature_dim, fields, 1.0)?;
            params.insert(&format!("{prefix}.{head}.b"), Tensor::zeros(&[1, fields]))?;
        }
        params.insert_normal(&format!("{prefix}.j_raw"), &[fields, fields], 0.5)?;
        params.insert(
            &format!("{prefix}.stencil"),
            repeat_kernel(&LAPLACIAN5, fields),
        )?;
        Ok(Self {
            prefix: prefix.to_string(),
            feature_dim,
            fields,
        })
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    fn linear(
        &self,
        params: &ModelParams,
        head: &str,
        h: &Tensor,
    ) -> Result<Tensor, DynamicsError> {
        let w = params.get(&self.name(&format!("{head}.w")))?;
        let b = params.get(&self.name(&format!("{head}.b")))?;
        let mut y = h.matmul(w)?;
        let k = y.cols();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % k];
        }
        Ok(y)
    }

    /// `ψ = W_ψh`, `σ = softplus(W_σh)`, `α = W_αh`,
    /// `γ = softplus(W_γh) + 0.1`, `s = clamp(W_sh, ±5)`.
    pub fn project(
        &self,
        params: &ModelParams,
        h: &Tensor,
    ) -> Result<(Tensor, OperatorCoeffs), DynamicsError> {
        let psi = self.linear(params, "psi", h)?;
        let sigma = self.linear(params, "sigma", h)?.map(softplus_f64);
        let alpha = self.linear(params, "alpha", h)?;
        let gamma = self
            .linear(params, "gamma", h)?
            .map(|x| softplus_f64(x) + GAMMA_FLOOR);
        let s = self
            .linear(params, "s", h)?
            .map(|x| x.clamp(-SOURCE_CLAMP, SOURCE_CLAMP));
        Ok((
            psi,
            OperatorCoeffs {
                sigma,
                alpha,
                gamma,
                s,
            },
        ))
    }

    pub fn j_anti(&self, params: &ModelParams) -> Result<Tensor, DynamicsError> {
        Ok(antisymmetrize(params.get(&self.name("j_raw"))?)?)
    }

    pub fn stencil<'a>(&self, params: &'a ModelParams) -> Result<&'a Tensor, DynamicsError> {
        Ok(params.get(&self.name("stencil"))?)
    }

    fn linear_var<'t>(
        &self,
        bound: &BoundParams<'t>,
        head: &str,
        h: Var<'t>,
    ) -> Result<Var<'t>, DynamicsError> {
        let w = bound.get(&self.name(&format!("{head}.w")))?;
        let b = bound.get(&self.name(&format!("{head}.b")))?;
        Ok(h.matmul(w)?.add(b)?)
    }

    /// Tape version of [`DynamicsHeads::project`].
    pub fn project_var<'t>(
        &self,
        bound: &BoundParams<'t>,
        h: Var<'t>,
    ) -> Result<(Var<'t>, CoeffVars<'t>), DynamicsError> {
        let psi = self.linear_var(bound, "psi", h)?;
        let coeffs = CoeffVars {
            sigma: self.linear_var(bound, "sigma", h)?.softplus(),
            alpha: self.linear_var(bound, "alpha", h)?,
            gamma: self
                .linear_var(bound, "gamma", h)?
                .softplus()
                .add_scalar(GAMMA_FLOOR),
            s: self
                .linear_var(bound, "s", h)?
                .clamp(-SOURCE_CLAMP, SOURCE_CLAMP),
        };
        Ok((psi, coeffs))
    }

    /// Projects `h` and runs `substeps` Euler steps on the tape.
    pub fn project_evolve_var<'t>(
        &self,
        bound: &BoundParams<'t>,
        h: Var<'t>,
        grid: Grid2,
        dt: f64,
        substeps: usize,
    ) -> Result<Var<'t>, DynamicsError> {
        let (psi, coeffs) = self.project_var(bound, h)?;
        let j = bound.get(&self.name("j_raw"))?;
        let j_anti = j.sub(j.transpose()?)?;
        let stencil = bound.get(&self.name("stencil"))?;
        evolve_var(psi, &coeffs, j_anti, stencil, grid, dt, substeps)
    }
}

#[derive(Clone, Copy)]
pub struct CoeffVars<'t> {
    pub sigma: Var<'t>,
    pub alpha: Var<'t>,
    pub gamma: Var<'t>,
    pub s: Var<'t>,
}

fn first_bad(t: &Tensor, term: &'static str) -> Result<(), DynamicsError> {
    let k = t.cols().max(1);
    match t.data().iter().position(|x| !x.is_finite()) {
        Some(i) => Err(DynamicsError::Numeric {
            term,
            pixel: i / k,
            field: i % k,
        }),
        None => Ok(()),
    }
}

fn check_shapes(
    psi: &Tensor,
    coeffs: &OperatorCoeffs,
    j_anti: &Tensor,
    grid: Grid2,
) -> Result<(), DynamicsError> {
    let (p, k) = psi.dims2()?;
    let ok = p == grid.pixels()
        && [&coeffs.sigma, &coeffs.alpha, &coeffs.gamma, &coeffs.s]
            .iter()
            .all(|t| t.shape() == psi.shape())
        && j_anti.shape() == [k, k];
    if ok {
        Ok(())
    } else {
        Err(DynamicsError::Argument(format!(
            "ψ {:?}, J {:?}, grid {}×{} with mismatched coefficients",
            psi.shape(),
            j_anti.shape(),
            grid.height,
            grid.width
        )))
    }
}

/// One explicit Euler step.
pub fn euler_step(
    psi: &Tensor,
    coeffs: &OperatorCoeffs,
    j_anti: &Tensor,
    stencil: &Tensor,
    grid: Grid2,
    dt: f64,
) -> Result<Tensor, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::Argument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    check_shapes(psi, coeffs, j_anti, grid)?;
    let diffusion = conv3x3(psi, stencil, grid)?.zip_map(&coeffs.sigma, |l, s| -s * l)?;
    first_bad(&diffusion, "diffusion")?;
    let advection = apply_poisson(psi, j_anti)?.zip_map(&coeffs.alpha, |j, a| a * j)?;
    first_bad(&advection, "advection")?;
    let damping = psi.zip_map(&coeffs.gamma, |x, g| -g * x)?;
    first_bad(&damping, "damping")?;
    first_bad(&coeffs.s, "source")?;
    let mut out = psi.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let update =
            diffusion.data()[i] + advection.data()[i] + damping.data()[i] + coeffs.s.data()[i];
        *o += dt * update;
    }
    first_bad(&out, "result")?;
    Ok(out)
}

/// `substeps` Euler steps with fixed coefficients; returns every state
/// including the initial one.
pub fn evolve_trajectory(
    psi0: &Tensor,
    coeffs: &OperatorCoeffs,
    j_anti: &Tensor,
    stencil: &Tensor,
    grid: Grid2,
    dt: f64,
    substeps: usize,
) -> Result<Vec<Tensor>, DynamicsError> {
    if substeps == 0 {
        return Err(DynamicsError::Argument("substeps must be ≥ 1".into()));
    }
    let mut traj = Vec::with_capacity(substeps + 1);
    traj.push(psi0.clone());
    for n in 0..substeps {
        let next = euler_step(&traj[n], coeffs, j_anti, stencil, grid, dt).map_err(|e| {
            DynamicsError::Substep {
                substep: n,
                source: Box::new(e),
            }
        })?;
        traj.push(next);
    }
    Ok(traj)
}

pub fn evolve(
    psi0: &Tensor,
    coeffs: &OperatorCoeffs,
    j_anti: &Tensor,
    stencil: &Tensor,
    grid: Grid2,
    dt: f64,
    substeps: usize,
) -> Result<Tensor, DynamicsError> {
    Ok(
        evolve_trajectory(psi0, coeffs, j_anti, stencil, grid, dt, substeps)?
            .pop()
            .expect("trajectory is nonempty"),
    )
}

pub fn euler_step_var<'t>(
    psi: Var<'t>,
    c: &CoeffVars<'t>,
    j_anti: Var<'t>,
    stencil: Var<'t>,
    grid: Grid2,
    dt: f64,
) -> Result<Var<'t>, TensorError> {
    let diffusion = c.sigma.mul(conv3x3_var(psi, stencil, grid)?)?.neg();
    let advection = c.alpha.mul(psi.matmul(j_anti.transpose()?)?)?;
    let damping = c.gamma.mul(psi)?.neg();
    let update = diffusion.add(advection)?.add(damping)?.add(c.s)?;
    psi.add(update.scale(dt))
}

pub fn evolve_var<'t>(
    psi0: Var<'t>,
    c: &CoeffVars<'t>,
    j_anti: Var<'t>,
    stencil: Var<'t>,
    grid: Grid2,
    dt: f64,
    substeps: usize,
) -> Result<Var<'t>, DynamicsError> {
    if substeps == 0 || !(dt > 0.0) {
        return Err(DynamicsError::Argument(format!(
            "substeps {substeps}, dt {dt}"
        )));
    }
    let mut psi = psi0;
    for _ in 0..substeps {
        psi = euler_step_var(psi, c, j_anti, stencil, grid, dt)?;
    }
    Ok(psi)
}

/// `½ Σ ψ²`.
pub fn quadratic_energy(psi: &Tensor) -> f64 {
    0.5 * psi.data().iter().map(|x| x * x).sum::<f64>()
}

/// `E(next) − E(prev)` as `½ Σ (next − prev)(next + prev)`, which avoids
/// cancelling two large totals.
pub fn quadratic_energy_change(prev: &Tensor, next: &Tensor) -> f64 {
    0.5 * prev
        .data()
        .iter()
        .zip(next.data())
        .map(|(p, q)| (q - p) * (q + p))
        .sum::<f64>()
}

/// `½ Σ_edges (ψ_i − ψ_j)²` over the 4-connected grid, summed over fields.
pub fn grid_dirichlet_energy(psi: &Tensor, grid: Grid2) -> f64 {
    let k = psi.cols();
    let mut e = 0.0;
    for r in 0..grid.height {
        for c in 0..grid.width {
            let i = grid.index(r, c);
            for (nr, nc) in [(r, c + 1), (r + 1, c)] {
                if nr < grid.height && nc < grid.width {
                    let j = grid.index(nr, nc);
                    for f in 0..k {
                        let d = psi.get(i, f) - psi.get(j, f);
                        e += d * d;
                    }
                }
            }
        }
    }
    0.5 * e
}

/// Under pure advection `E_{n+1} − E_n = dt·⟨ψ, a⟩ + ½dt²‖a‖²` with
/// `a = α⊙(J_anti ψ)`. Returns `(½dt²‖a‖², dt·⟨ψ, a⟩)`; the linear term
/// vanishes whenever `α` is uniform across fields at each pixel.
pub fn advection_drift_terms(
    psi: &Tensor,
    alpha: &Tensor,
    j_anti: &Tensor,
    dt: f64,
) -> Result<(f64, f64), TensorError> {
    let a = apply_poisson(psi, j_anti)?.zip_map(alpha, |j, al| al * j)?;
    let sq: f64 = a.data().iter().map(|x| x * x).sum();
    let lin: f64 = a.data().iter().zip(psi.data()).map(|(x, y)| x * y).sum();
    Ok((0.5 * dt * dt * sq, dt * lin))
}

/// One step `ψ ← ψ − dt·Aψ` of pure graph dissipation.
pub fn dissipative_graph_step(
    sys: &ScreenedSystem,
    psi: &[f64],
    dt: f64,
) -> Result<Vec<f64>, GraphError> {
    let mut a = vec![0.0; psi.len()];
    sys.apply_into(psi, &mut a)?;
    Ok(psi.iter().zip(&a).map(|(x, y)| x - dt * y).collect())
}

/// Dirichlet energies along a pure-dissipation trajectory (zero source).
pub fn dissipation_energies(
    sys: &ScreenedSystem,
    psi0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Vec<f64>, GraphError> {
    let zero = vec![0.0; psi0.len()];
    let mut psi = psi0.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(dirichlet_energy(sys, &psi, &zero)?);
    for _ in 0..steps {
        psi = dissipative_graph_step(sys, &psi, dt)?;
        out.push(dirichlet_energy(sys, &psi, &zero)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkewSpectrum {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// Consecutive pairs of the sorted values.
    pub pairs: Vec<(f64, f64)>,
    pub max_pair_gap: f64,
    pub rank: usize,
    pub casimir_dim: usize,
    /// `max |J + Jᵀ|`; zero for a correctly antisymmetrized matrix.
    pub skew_residual: f64,
}

pub fn skew_spectrum(j_anti: &Tensor) -> Result<SkewSpectrum, TensorError> {
    let (k, k2) = j_anti.dims2()?;
    if k != k2 {
        return Err(crate::tensor::dim_err(
            "skew_spectrum",
            format!("{k}×{k2} is not square"),
        ));
    }
    let m = DMatrix::from_row_slice(k, k, j_anti.data());
    let mut sv: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let pairs: Vec<(f64, f64)> = sv.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    let max_pair_gap = pairs.iter().fold(0.0f64, |g, (a, b)| g.max((a - b).abs()));
    let rank = sv.iter().filter(|&&s| s > RANK_TOL).count();
    let mut skew_residual = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            skew_residual = skew_residual.max((j_anti.get(i, j) + j_anti.get(j, i)).abs());
        }
    }
    Ok(SkewSpectrum {
        singular_values: sv,
        pairs,
        max_pair_gap,
        rank,
        casimir_dim: k - rank,
        skew_residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub e_quad: f64,
    pub e_dirichlet: f64,
    /// `E_{n+1} − E_n` (zero on the last row).
    pub drift: f64,
    /// `½dt²‖α J_anti ψ_n‖²`.
    pub predicted_drift: f64,
    /// `dt⟨ψ_n, α J_anti ψ_n⟩`.
    pub linear_term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub dt: f64,
    pub steps: Vec<StepDiagnostics>,
    /// `max_n |drift − predicted − linear|`.
    pub max_identity_residual: f64,
    pub spectrum: SkewSpectrum,
    pub skew_exact: bool,
}

/// Structural report over a trajectory evolved with `alpha`; the drift
/// identity is meaningful when σ = γ = s = 0.
pub fn structure_diagnostics(
    j_anti: &Tensor,
    trajectory: &[Tensor],
    alpha: &Tensor,
    grid: Grid2,
    dt: f64,
) -> Result<DiagnosticsReport, DynamicsError> {
    if trajectory.len() < 2 {
        return Err(DynamicsError::Argument(
            "trajectory needs at least two states".into(),
        ));
    }
    let mut steps = Vec::with_capacity(trajectory.len());
    let mut worst = 0.0f64;
    for (n, psi) in trajectory.iter().enumerate() {
        let e = quadratic_energy(psi);
        let (predicted, linear) = advection_drift_terms(psi, alpha, j_anti, dt)?;
        let drift = trajectory
            .get(n + 1)
            .map_or(0.0, |next| quadratic_energy_change(psi, next));
        if n + 1 < trajectory.len() {
            worst = worst.max((drift - predicted - linear).abs());
        }
        steps.push(StepDiagnostics {
            step: n,
            e_quad: e,
            e_dirichlet: grid_dirichlet_energy(psi, grid),
            drift,
            predicted_drift: predicted,
            linear_term: linear,
        });
    }
    let spectrum = skew_spectrum(j_anti)?;
    Ok(DiagnosticsReport {
        dt,
        steps,
        max_identity_residual: worst,
        skew_exact: spectrum.skew_residual == 0.0,
        spectrum,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftOrder {
    pub dts: Vec<f64>,
    /// `|E(ψ_1) − E(ψ_0)|` for one pure-advection step at each `dt`.
    pub step_drift: Vec<f64>,
    /// Log-log slope of `step_drift` against `dt`.
    pub step_order: f64,
    /// `|E(ψ(T)) − E(ψ_0)|` after `T/dt` steps at each `dt`.
    pub horizon_drift: Vec<f64>,
    pub horizon_order: f64,
    pub horizon: f64,
}

/// Energy drift of pure advection as `dt` shrinks, per step and over a fixed
/// horizon. The exact flow conserves the quadratic energy, so both drifts are
/// pure discretization error.
pub fn drift_order(
    psi0: &Tensor,
    alpha: &Tensor,
    j_anti: &Tensor,
    grid: Grid2,
    dts: &[f64],
    horizon: f64,
) -> Result<DriftOrder, DynamicsError> {
    let (p, k) = psi0.dims2()?;
    let coeffs = OperatorCoeffs {
        alpha: alpha.clone(),
        ..OperatorCoeffs::zeros(p, k)
    };
    let stencil = repeat_kernel(&LAPLACIAN5, k);
    let mut step_drift = Vec::with_capacity(dts.len());
    let mut horizon_drift = Vec::with_capacity(dts.len());
    for &dt in dts {
        let one = euler_step(psi0, &coeffs, j_anti, &stencil, grid, dt)?;
        step_drift.push(quadratic_energy_change(psi0, &one).abs());
        let steps = (horizon / dt).round().max(1.0) as usize;
        let end = evolve(psi0, &coeffs, j_anti, &stencil, grid, dt, steps)?;
        horizon_drift.push(quadratic_energy_change(psi0, &end).abs());
    }
    Ok(DriftOrder {
        dts: dts.to_vec(),
        step_order: log_log_slope(dts, &step_drift),
        horizon_order: log_log_slope(dts, &horizon_drift),
        step_drift,
        horizon_drift,
        horizon,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot() -> Tensor {
        Tensor::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap()
    }

    #[test]
    fn advection_hand_example() {
        let g = Grid2::new(1, 1);
        let psi = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let coeffs = OperatorCoeffs::advection(1, 2, 1.0);
        let stencil = repeat_kernel(&LAPLACIAN5, 2);
        let next = euler_step(&psi, &coeffs, &rot(), &stencil, g, 0.1).unwrap();
        assert_eq!(next.data(), &[1.0, -0.1]);
        let drift = quadratic_energy_change(&psi, &next);
        assert!((drift - 0.005).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficients_are_identity() {
        let g = Grid2::new(2, 3);
        let psi = Tensor::new(vec![6, 2], (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let next = euler_step(
            &psi,
            &OperatorCoeffs::zeros(6, 2),
            &rot(),
            &repeat_kernel(&LAPLACIAN5, 2),
            g,
            0.1,
        )
        .unwrap();
        assert_eq!(next, psi);
    }

    #[test]
    fn constant_field_only_damps() {
        let g = Grid2::new(3, 3);
        let psi = Tensor::full(&[9, 1], 2.0);
        let mut c = OperatorCoeffs::zeros(9, 1);
        c.sigma = Tensor::full(&[9, 1], 0.7);
        c.gamma = Tensor::full(&[9, 1], 0.5);
        let next = euler_step(
            &psi,
            &c,
            &Tensor::zeros(&[1, 1]),
            &repeat_kernel(&LAPLACIAN5, 1),
            g,
            0.1,
        )
        .unwrap();
        for &x in next.data() {
            assert!((x - 0.95 * 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn numeric_error_names_term() {
        let g = Grid2::new(1, 1);
        let psi = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let mut c = OperatorCoeffs::zeros(1, 1);
        c.gamma = Tensor::full(&[1, 1], f64::INFINITY);
        let err = euler_step(
            &psi,
            &c,
            &Tensor::zeros(&[1, 1]),
            &repeat_kernel(&LAPLACIAN5, 1),
            g,
            0.1,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            DynamicsError::Numeric {
                term: "damping",
                ..
            }
        ));
    }

    #[test]
    fn rotation_generator_spectrum() {
        let s = skew_spectrum(&rot()).unwrap();
        assert_eq!(s.rank, 2);
        assert_eq!(s.casimir_dim, 0);
        assert!(
            (s.singular_values[0] - 1.0).abs() < 1e-14
                && (s.singular_values[1] - 1.0).abs() < 1e-14
        );
    }

    #[test]
    fn zero_features_project_to_floors() {
        let mut p = ModelParams::new(3);
        let heads = DynamicsHeads::register(&mut p, "dyn", 4, 2).unwrap();
        let (psi, c) = heads.project(&p, &Tensor::zeros(&[5, 4])).unwrap();
        assert!(psi
            .data()
            .iter()
            .chain(c.alpha.data())
            .chain(c.s.data())
            .all(|&x| x == 0.0));
        assert!(c.sigma.data().iter().all(|&x| x == 2f64.ln()));
        assert!(c.gamma.data().iter().all(|&x| x == 2f64.ln() + 0.1));
    }
}
