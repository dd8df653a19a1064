//! Seeded scenarios shared by the command-line harness and the acceptance
//! tests: dynamics trajectories, readout dumps, scan timing and a lattice
//! forward pass with the object layer.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::dynamics::{
    antisymmetrize, drift_order, evolve_trajectory, skew_spectrum, structure_diagnostics,
    DiagnosticsReport, DriftOrder, DynamicsError, OperatorCoeffs,
};
use crate::graph::{grid_topology, GraphError};
use crate::layer::{LayerConfig, LayerError, LayerInput, PoissonLayer};
use crate::multigrid::{assignment_diagnostics, AssignmentDiagnostics, Segments};
use crate::params::{ModelParams, ParamError};
use crate::readout::{feature_names, readout, GradientField, ReadoutError, ReadoutKind};
use crate::scan::{coefficients, scan_parallel, scan_sequential, ScanError};
use crate::stencil::{conv3x3, repeat_kernel, Grid2, LAPLACIAN5};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// `P × K` field, each column a sum of three random low-frequency modes.
pub fn smooth_field(grid: Grid2, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = Tensor::zeros(&[grid.pixels(), k]);
    for a in 0..k {
        for _ in 0..3 {
            let amp = rng.gen_range(-1.0..1.0);
            let (fx, fy) = (rng.gen_range(0.5..2.5), rng.gen_range(0.5..2.5));
            let phase = rng.gen_range(0.0..2.0 * PI);
            for r in 0..grid.height {
                for c in 0..grid.width {
                    let x = c as f64 / grid.width as f64;
                    let y = r as f64 / grid.height as f64;
                    let i = grid.index(r, c);
                    let v = out.get(i, a) + amp * (2.0 * PI * (fx * x + fy * y) + phase).sin();
                    out.set(i, a, v);
                }
            }
        }
    }
    out
}

/// `K × K` skew matrix `J − Jᵀ` with `J` uniform in `[−1, 1]`.
pub fn random_skew(k: usize, rng: &mut ChaCha8Rng) -> Result<Tensor, TensorError> {
    let raw = Tensor::new(
        vec![k, k],
        (0..k * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    antisymmetrize(&raw)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsRunConfig {
    pub height: usize,
    pub width: usize,
    pub fields: usize,
    pub dt: f64,
    pub steps: usize,
    /// Field-uniform advection gain.
    pub alpha: f64,
    /// Step sizes for the drift-order fit.
    pub order_dts: Vec<f64>,
    pub order_horizon: f64,
}

impl Default for DynamicsRunConfig {
    fn default() -> Self {
        Self {
            height: 8,
            width: 8,
            fields: 5,
            dt: 0.05,
            steps: 20,
            alpha: 1.0,
            order_dts: vec![0.04, 0.02, 0.01, 0.005],
            order_horizon: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DynamicsRun {
    pub config: DynamicsRunConfig,
    pub seed: u64,
    pub report: DiagnosticsReport,
    pub order: DriftOrder,
}

/// Pure advection from a smooth random field under a random skew `J`.
pub fn dynamics_run(cfg: &DynamicsRunConfig, seed: u64) -> Result<DynamicsRun, HarnessError> {
    if cfg.height == 0 || cfg.width == 0 || cfg.fields == 0 || cfg.steps == 0 {
        return Err(HarnessError::Config(
            "grid, fields and steps must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid2::new(cfg.height, cfg.width);
    let p = grid.pixels();
    let psi0 = smooth_field(grid, cfg.fields, &mut rng);
    // Unit spectral norm keeps `dt‖J‖` independent of K.
    let raw = random_skew(cfg.fields, &mut rng)?;
    let norm = skew_spectrum(&raw)?
        .singular_values
        .first()
        .copied()
        .unwrap_or(0.0);
    let j = if norm > 0.0 {
        raw.map(|v| v / norm)
    } else {
        raw
    };
    let coeffs = OperatorCoeffs::advection(p, cfg.fields, cfg.alpha);
    let stencil = repeat_kernel(&LAPLACIAN5, cfg.fields);
    let traj = evolve_trajectory(&psi0, &coeffs, &j, &stencil, grid, cfg.dt, cfg.steps)?;
    let report = structure_diagnostics(&j, &traj, &coeffs.alpha, grid, cfg.dt)?;
    let order = drift_order(
        &psi0,
        &coeffs.alpha,
        &j,
        grid,
        &cfg.order_dts,
        cfg.order_horizon,
    )?;
    Ok(DynamicsRun {
        config: cfg.clone(),
        seed,
        report,
        order,
    })
}

/// Readout of a smooth seeded field: column names and the `P × F` feature
/// matrix. Gradients use Sobel kernels; the curvature readout uses the
/// five-point Laplacian `Δψ`.
pub fn readout_maps(
    kind: ReadoutKind,
    grid: Grid2,
    k: usize,
    seed: u64,
) -> Result<(Vec<String>, Tensor), HarnessError> {
    let names = feature_names(kind, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psi = smooth_field(grid, k, &mut rng);
    let g = GradientField::sobel(&psi, grid)?;
    let lap = conv3x3(&psi, &repeat_kernel(&LAPLACIAN5, k), grid)?.map(|v| -v);
    let maps = readout(kind, &psi, &g, Some(&lap), grid)?;
    Ok((names, maps))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanBenchRow {
    pub n: usize,
    pub seed: u64,
    pub sequential_s: f64,
    pub parallel_s: f64,
    /// `max|p − s| / max|s|`.
    pub max_rel_deviation: f64,
}

/// Random chain with `w, λ ∈ [0.1, 2]`, `b ∈ [−1, 1]`, `ψ₀ ∈ [−1, 1]`.
pub fn random_chain(
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(crate::scan::AffineChain, f64), ScanError> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
    let l: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Ok((coefficients(&w, &l, &b)?, rng.gen_range(-1.0..1.0)))
}

pub fn scan_deviation(par: &[f64], seq: &[f64]) -> f64 {
    let scale = seq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = par
        .iter()
        .zip(seq)
        .fold(0.0f64, |m, (p, s)| m.max((p - s).abs()));
    if scale > 0.0 {
        dev / scale
    } else {
        dev
    }
}

pub fn scan_bench(ns: &[usize], seeds: &[u64]) -> Result<Vec<ScanBenchRow>, HarnessError> {
    let mut rows = Vec::with_capacity(ns.len() * seeds.len());
    for &n in ns {
        for &seed in seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).rotate_left(32));
            let (chain, psi0) = random_chain(n, &mut rng)?;
            let t = Instant::now();
            let seq = scan_sequential(&chain, psi0)?;
            let sequential_s = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let par = scan_parallel(&chain, psi0)?;
            let parallel_s = t.elapsed().as_secs_f64();
            rows.push(ScanBenchRow {
                n,
                seed,
                sequential_s,
                parallel_s,
                max_rel_deviation: scan_deviation(&par, &seq),
            });
        }
    }
    Ok(rows)
}

/// A layer on an `H × W` lattice with random per-cell inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub height: usize,
    pub width: usize,
    pub connectivity: u8,
    pub layer: LayerConfig,
}

impl LatticeConfig {
    /// Sudoku-shaped smoke configuration: 9×9 8-connected lattice, digit
    /// inputs, 16 fields and 16 objects. Shapes only; nothing is trained.
    pub fn sudoku_smoke() -> Self {
        Self {
            height: 9,
            width: 9,
            connectivity: 8,
            layer: LayerConfig {
                input_dim: 10,
                fields: 16,
                rounds: 2,
                classes: 9,
                hidden: 32,
                encoder_hidden: vec![64],
                head_hidden: vec![64],
                decoder_hidden: vec![64],
                objects: Some(crate::multigrid::ObjectConfig::default()),
                feedback: Default::default(),
                conductance: Default::default(),
                lambda_over_n: false,
                lambda_floor: 1e-3,
                scans: true,
                positions: true,
                decoder_psi: true,
                activation: Default::default(),
                cg: crate::cg::CgConfig {
                    jacobi: true,
                    max_iters: 1000,
                    rel_tol: 1e-6,
                    ..Default::default()
                },
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeRound {
    pub round: usize,
    pub tau: f64,
    pub max_cg_iterations: usize,
    pub max_rel_residual: f64,
    pub mean_dissipation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeReport {
    pub height: usize,
    pub width: usize,
    pub param_count: usize,
    pub rounds: Vec<LatticeRound>,
    /// Assignment diagnostics of the last round, when objects are enabled.
    pub objects: Option<AssignmentDiagnostics>,
    /// Temperature of the last round's assignment softmax.
    pub assignment_tau: Option<f64>,
    pub light_objects: Vec<usize>,
    /// Cross-entropy of the last round's logits against random labels.
    pub loss: f64,
}

/// Seeded initialization and one forward pass on random one-hot inputs.
pub fn lattice_forward(cfg: &LatticeConfig, seed: u64) -> Result<LatticeReport, HarnessError> {
    let topo = Arc::new(grid_topology(cfg.height, cfg.width, cfg.connectivity)?);
    let n = topo.n_nodes();
    let mut params = ModelParams::new(seed);
    let layer = PoissonLayer::register(&mut params, &cfg.layer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let d = cfg.layer.input_dim;
    let mut x = Tensor::zeros(&[n, d]);
    for i in 0..n {
        x.set(i, rng.gen_range(0..d), 1.0);
    }
    let labels: Vec<usize> = (0..n)
        .map(|_| rng.gen_range(0..cfg.layer.classes))
        .collect();
    let pos: Vec<f64> = topo
        .positions()
        .ok_or_else(|| HarnessError::Config("lattice without positions".into()))?
        .iter()
        .flatten()
        .copied()
        .collect();
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let input = LayerInput {
        x: tape.constant(x),
        topology: Arc::clone(&topo),
        positions: tape.constant(Tensor::new(vec![n, 2], pos)?),
        segments: Segments::single(n),
    };
    let out = layer.forward(&bound, &input)?;
    let rounds = out
        .iter()
        .map(|r| LatticeRound {
            round: r.round,
            tau: r.tau,
            max_cg_iterations: r.records.iter().map(|s| s.iterations).max().unwrap_or(0),
            max_rel_residual: r.records.iter().fold(0.0f64, |m, s| m.max(s.rel_residual)),
            mean_dissipation: r.dissipation.value().sum()
                / r.dissipation.value().len().max(1) as f64,
        })
        .collect();
    let last = out
        .last()
        .ok_or_else(|| HarnessError::Config("rounds must be ≥ 1".into()))?;
    let (objects, assignment_tau, light_objects) = match &last.objects {
        Some(o) => (
            Some(assignment_diagnostics(&o.rho.value())?),
            Some(o.tau),
            o.light_objects.clone(),
        ),
        None => (None, None, Vec::new()),
    };
    Ok(LatticeReport {
        height: cfg.height,
        width: cfg.width,
        param_count: layer.param_count(),
        rounds,
        objects,
        assignment_tau,
        light_objects,
        loss: last.logits.cross_entropy(&labels)?.value().data()[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chains_agree() {
        let rows = scan_bench(&[1, 7, 100], &[0, 1]).unwrap();
        assert!(rows.iter().all(|r| r.max_rel_deviation <= 1e-12));
    }

    #[test]
    fn sudoku_smoke_runs() {
        let r = lattice_forward(&LatticeConfig::sudoku_smoke(), 3).unwrap();
        assert_eq!(r.rounds.len(), 2);
        let o = r.objects.unwrap();
        assert_eq!(o.cluster_map.len(), 81);
        assert!(o.cluster_map.iter().all(|&c| c < 16));
        assert!(r.loss.is_finite());
    }

    #[test]
    fn readout_shapes() {
        let (names, maps) = readout_maps(ReadoutKind::Noether, Grid2::new(4, 5), 3, 2).unwrap();
        assert_eq!(maps.dims2().unwrap(), (20, names.len()));
    }
}
