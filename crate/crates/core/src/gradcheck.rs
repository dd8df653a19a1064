//! Central finite-difference checks of tape gradients, and the suites run by
//! the `gradcheck` command.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::cg::{poisson_solve, CgConfig, CgError};
use crate::dynamics::{DynamicsError, DynamicsHeads};
use crate::graph::{grid_topology, GraphError, GraphTopology};
use crate::layer::{ConductanceSource, LayerConfig, LayerError, LayerInput, PoissonLayer};
use crate::maze::{generate_maze, MazeBatch, MazeModel, MazeModelConfig, MazeModelError};
use crate::multigrid::{MultigridError, ObjectConfig, ObjectLayer, Segments};
use crate::nn::Activation;
use crate::params::{BoundParams, ModelParams, ParamError};
use crate::scan::causal_scan;
use crate::stencil::Grid2;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Cg(#[from] CgError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Multigrid(#[from] MultigridError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Maze(#[from] MazeModelError),
    #[error("unknown suite {0:?}")]
    UnknownSuite(String),
}

/// Step, error floor and tolerance for one comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdConfig {
    pub step: f64,
    /// Denominator floor, so entries that are zero analytically compare on
    /// an absolute scale.
    pub floor: f64,
    pub tolerance: f64,
    /// Entries checked per tensor; larger tensors are sampled.
    pub max_entries: usize,
}

impl FdConfig {
    pub fn new(tolerance: f64) -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            tolerance,
            max_entries: 8,
        }
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub suite: String,
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub tolerance: f64,
}

pub const CSV_HEADER: &str = "suite,parameter,index,analytic,numeric,rel_error,tolerance,passed";

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.rel_error <= self.tolerance
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{:e},{}",
            self.suite,
            self.parameter,
            self.index,
            self.analytic,
            self.numeric,
            self.rel_error,
            self.tolerance,
            self.passed()
        )
    }
}

fn pick(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, max).into_vec();
        v.sort_unstable();
        v
    }
}

type LeafLoss = dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, GradCheckError>;
type ParamLoss = dyn for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>, GradCheckError>;

fn scalar(v: Var<'_>) -> f64 {
    v.value().data()[0]
}

/// Compares the tape gradient of `loss` with respect to each input against
/// central differences.
pub fn check_inputs(
    suite: &str,
    names: &[&str],
    inputs: &[Tensor],
    cfg: &FdConfig,
    rng: &mut ChaCha8Rng,
    loss: &LeafLoss,
) -> Result<Vec<CheckRow>, GradCheckError> {
    let eval = |xs: &[Tensor]| -> Result<f64, GradCheckError> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        Ok(scalar(loss(&tape, &vars)?))
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let grads = tape.backward(loss(&tape, &vars)?)?;
    let mut rows = Vec::new();
    for (k, (name, var)) in names.iter().zip(&vars).enumerate() {
        let analytic = grads.wrt(*var);
        for i in pick(inputs[k].len(), cfg.max_entries, rng) {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += cfg.step;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] -= 2.0 * cfg.step;
            let down = eval(&xs)?;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic.data()[i];
            rows.push(CheckRow {
                suite: suite.to_string(),
                parameter: name.to_string(),
                index: i,
                analytic: a,
                numeric,
                rel_error: rel_error(a, numeric, cfg.floor),
                tolerance: cfg.tolerance,
            });
        }
    }
    Ok(rows)
}

/// Same comparison for every named parameter of `params`.
pub fn check_params(
    suite: &str,
    params: &ModelParams,
    cfg: &FdConfig,
    rng: &mut ChaCha8Rng,
    loss: &ParamLoss,
) -> Result<Vec<CheckRow>, GradCheckError> {
    let eval = |p: &ModelParams| -> Result<f64, GradCheckError> {
        let tape = Tape::new();
        let bound = p.bind(&tape);
        Ok(scalar(loss(&tape, &bound)?))
    };
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let grads = tape.backward(loss(&tape, &bound)?)?;
    let mut rows = Vec::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let analytic = grads.wrt(bound.get(name)?);
        for i in pick(params.get(name)?.len(), cfg.max_entries, rng) {
            let mut p = params.clone();
            p.get_mut(name)?.data_mut()[i] += cfg.step;
            let up = eval(&p)?;
            p.get_mut(name)?.data_mut()[i] -= 2.0 * cfg.step;
            let down = eval(&p)?;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic.data()[i];
            rows.push(CheckRow {
                suite: suite.to_string(),
                parameter: name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_error: rel_error(a, numeric, cfg.floor),
                tolerance: cfg.tolerance,
            });
        }
    }
    Ok(rows)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("length matches shape")
}

/// Adds uniform noise in `±scale` to every parameter, so zero-initialized
/// layers still pass gradient to everything before them.
pub fn jitter(params: &mut ModelParams, scale: f64, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let t = params.get_mut(&name).expect("name from registry");
        for v in t.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

/// Connected graph on `n` nodes: a random spanning tree plus `extra` chords.
pub fn random_topology(
    n: usize,
    extra: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GraphTopology, GraphError> {
    let mut edges = Vec::with_capacity(n + extra);
    for i in 1..n {
        edges.push((rng.gen_range(0..i), i));
    }
    let mut seen: std::collections::BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let mut tries = 0;
    while edges.len() < n.saturating_sub(1) + extra && tries < 50 * (extra + 1) && n > 2 {
        tries += 1;
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let e = (a.min(b), a.max(b));
        if a != b && seen.insert(e) {
            edges.push(e);
        }
    }
    GraphTopology::new(n, &edges)
}

fn tight_cg() -> CgConfig {
    CgConfig {
        max_iters: 2000,
        rel_tol: 1e-13,
        abs_floor: 1e-30,
        jacobi: false,
    }
}

/// Gradients of `Σψ*²` through the implicit solve with respect to `b`, `w`
/// and `λ` on a random `n`-node system.
pub fn cg_suite(seed: u64, n: usize, fd: &FdConfig) -> Result<Vec<CheckRow>, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = Arc::new(random_topology(n, n / 2, &mut rng)?);
    let e = topo.n_edges();
    let inputs = [
        uniform(&mut rng, &[n, 1], -1.0, 1.0),
        uniform(&mut rng, &[e, 1], 0.5, 2.0),
        uniform(&mut rng, &[n, 1], 0.1, 1.0),
    ];
    let cg = tight_cg();
    check_inputs(
        "cg",
        &["b", "w", "lambda"],
        &inputs,
        fd,
        &mut rng,
        &move |_, v| {
            let (psi, _) = poisson_solve(&topo, v[1], v[2], v[0], &cg)?;
            Ok(psi.square().sum())
        },
    )
}

/// Weighted sum of the causal scan output against `w`, `λ`, `b` on `n × 2`
/// sequences.
pub fn scan_suite(seed: u64, n: usize, fd: &FdConfig) -> Result<Vec<CheckRow>, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [
        uniform(&mut rng, &[n, 2], 0.2, 2.0),
        uniform(&mut rng, &[n, 2], 0.2, 2.0),
        uniform(&mut rng, &[n, 2], -1.0, 1.0),
    ];
    let c = uniform(&mut rng, &[n, 2], -1.0, 1.0);
    check_inputs(
        "scan",
        &["w", "lambda", "b"],
        &inputs,
        fd,
        &mut rng,
        &move |tape, v| {
            let psi = causal_scan(v[0], v[1], v[2])?;
            Ok(psi.mul(tape.constant(c.clone()))?.sum())
        },
    )
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..classes)).collect()
}

/// One recurrent round of the layer on a small grid, cross-entropy against
/// random labels, every parameter tensor checked.
pub fn layer_suite(
    seed: u64,
    rounds: usize,
    fd: &FdConfig,
) -> Result<Vec<CheckRow>, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, classes) = (3, 4, 3);
    let cfg = LayerConfig {
        input_dim: 3,
        fields: 2,
        rounds,
        classes,
        hidden: 6,
        encoder_hidden: vec![8],
        head_hidden: vec![8],
        decoder_hidden: vec![8],
        objects: None,
        feedback: Default::default(),
        conductance: ConductanceSource::Hidden,
        lambda_over_n: true,
        lambda_floor: 0.0,
        scans: true,
        positions: true,
        decoder_psi: true,
        activation: Activation::Silu,
        cg: tight_cg(),
    };
    let mut params = ModelParams::new(seed);
    let layer = PoissonLayer::register(&mut params, &cfg)?;
    jitter(&mut params, 0.1, &mut rng);
    let topo = Arc::new(grid_topology(h, w, 4)?);
    let n = topo.n_nodes();
    let x = uniform(&mut rng, &[n, 3], -1.0, 1.0);
    let pos = topo
        .positions()
        .expect("grid positions")
        .iter()
        .flatten()
        .copied()
        .collect();
    let pos = Tensor::new(vec![n, 2], pos)?;
    let labels = random_labels(&mut rng, n, classes);
    check_params("layer", &params, fd, &mut rng, &move |tape, bound| {
        let input = LayerInput {
            x: tape.constant(x.clone()),
            topology: Arc::clone(&topo),
            positions: tape.constant(pos.clone()),
            segments: Segments::single(n),
        };
        let out = layer.forward(bound, &input)?;
        Ok(out
            .last()
            .expect("rounds ≥ 1")
            .logits
            .cross_entropy(&labels)?)
    })
}

/// Object-layer V-cycle on two graphs, against its parameters and its
/// field and feature inputs.
pub fn vcycle_suite(seed: u64, fd: &FdConfig) -> Result<Vec<CheckRow>, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fields, feat, per) = (2, 3, 5);
    let cfg = ObjectConfig {
        objects: 3,
        hidden: 6,
        mass_normalize: true,
    };
    let mut params = ModelParams::new(seed);
    let layer = ObjectLayer::register(&mut params, "obj", &cfg, fields, feat, Activation::Silu)?;
    jitter(&mut params, 0.1, &mut rng);
    let seg = Segments::blocks(per, 2);
    let n = 2 * per;
    let psi = uniform(&mut rng, &[n, fields], -1.0, 1.0);
    let pos = uniform(&mut rng, &[n, 2], 0.0, 1.0);
    let f = uniform(&mut rng, &[n, feat], -1.0, 1.0);
    let c = uniform(&mut rng, &[n, fields], -1.0, 1.0);
    let cg = tight_cg();
    let mut rows = {
        let (layer, seg, pos, c, psi, f) = (
            layer.clone(),
            seg.clone(),
            pos.clone(),
            c.clone(),
            psi.clone(),
            f.clone(),
        );
        check_params("vcycle", &params, fd, &mut rng, &move |tape, bound| {
            let out = layer.vcycle(
                bound,
                tape.constant(psi.clone()),
                tape.constant(pos.clone()),
                tape.constant(f.clone()),
                &seg,
                &cg,
            )?;
            Ok(out.u.mul(tape.constant(c.clone()))?.sum())
        })?
    };
    let inputs = [psi, f];
    let p2 = params.clone();
    rows.extend(check_inputs(
        "vcycle",
        &["psi_tilde", "features"],
        &inputs,
        fd,
        &mut rng,
        &move |tape, v| {
            let bound = p2.bind(tape);
            let out = layer.vcycle(&bound, v[0], tape.constant(pos.clone()), v[1], &seg, &cg)?;
            Ok(out.u.mul(tape.constant(c.clone()))?.sum())
        },
    )?);
    Ok(rows)
}

/// Operator projection followed by `substeps` Euler steps on a small grid.
pub fn dynamics_suite(
    seed: u64,
    substeps: usize,
    fd: &FdConfig,
) -> Result<Vec<CheckRow>, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid2 {
        height: 4,
        width: 4,
    };
    let (d, k) = (5, 3);
    let mut params = ModelParams::new(seed);
    let heads = DynamicsHeads::register(&mut params, "dyn", d, k)?;
    jitter(&mut params, 0.1, &mut rng);
    let p = grid.pixels();
    let h = uniform(&mut rng, &[p, d], -1.0, 1.0);
    let c = uniform(&mut rng, &[p, k], -1.0, 1.0);
    let mut rows = {
        let (heads, h, c) = (heads.clone(), h.clone(), c.clone());
        check_params("dynamics", &params, fd, &mut rng, &move |tape, bound| {
            let psi =
                heads.project_evolve_var(bound, tape.constant(h.clone()), grid, 0.1, substeps)?;
            Ok(psi.mul(tape.constant(c.clone()))?.sum())
        })?
    };
    let p2 = params.clone();
    rows.extend(check_inputs(
        "dynamics",
        &["h"],
        &[h],
        fd,
        &mut rng,
        &move |tape, v| {
            let bound = p2.bind(tape);
            let psi = heads.project_evolve_var(&bound, v[0], grid, 0.1, substeps)?;
            Ok(psi.mul(tape.constant(c.clone()))?.sum())
        },
    )?);
    Ok(rows)
}

/// Maze model end to end on one 5×5 maze: embedding, conductances, solve,
/// decoder, cross-entropy against the true labels.
pub fn maze_suite(seed: u64, fd: &FdConfig) -> Result<Vec<CheckRow>, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maze = generate_maze(5, 5, seed).map_err(MazeModelError::from)?;
    let cfg = MazeModelConfig {
        cg: CgConfig {
            jacobi: true,
            ..tight_cg()
        },
        ..MazeModelConfig::default()
    };
    let (model, mut params) = MazeModel::init(&cfg, seed)?;
    jitter(&mut params, 0.05, &mut rng);
    let batch = MazeBatch::new(&[&maze])?;
    check_params("maze", &params, fd, &mut rng, &move |tape, bound| {
        Ok(model.loss_var(tape, bound, &batch)?)
    })
}

pub const SUITES: [&str; 6] = ["cg", "scan", "layer", "vcycle", "dynamics", "maze"];

/// Runs one named suite with its pinned tolerance.
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<CheckRow>, GradCheckError> {
    match name {
        "cg" => cg_suite(seed, 20, &FdConfig::new(1e-4)),
        "scan" => scan_suite(seed, 64, &FdConfig::new(1e-5)),
        "layer" => layer_suite(seed, 1, &FdConfig::new(1e-3)),
        "vcycle" => vcycle_suite(seed, &FdConfig::new(1e-3)),
        "dynamics" => dynamics_suite(seed, 3, &FdConfig::new(1e-3)),
        "maze" => maze_suite(seed, &FdConfig::new(1e-3)),
        other => Err(GradCheckError::UnknownSuite(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_uses_floor() {
        assert_eq!(rel_error(0.0, 0.0, 1e-6), 0.0);
        assert!((rel_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
        assert!((rel_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_topology_is_connected_tree_plus_chords() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_topology(30, 10, &mut rng).unwrap();
        assert_eq!(t.n_nodes(), 30);
        assert!(t.n_edges() >= 29);
    }
}
