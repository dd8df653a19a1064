//! Single-round Poisson pathfinder on 4-connected maze grids.
//!
//! Cell type indices are embedded; conductances come from a 4×4 bilinear form
//! over the embeddings, so every edge between the same pair of types gets the
//! same conductance. Damping may be divided by the per-maze cell count.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    generate_corpus, Maze, MazeError, Role, TypeMap, CLASS_GOAL, CLASS_OFF_PATH, CLASS_PATH,
    CLASS_SOURCE, CLASS_WALL, N_CLASSES, N_TYPES,
};
use crate::autodiff::softplus_f64;
use crate::autodiff::{Tape, Var};
use crate::cg::{cg_solve, CgConfig, CgError};
use crate::graph::{grid_topology, GraphError, GraphTopology, ScreenedSystem};
use crate::layer::{
    symmetric_form, ConductanceSource, Feedback, LayerConfig, LayerError, PoissonLayer,
    RoundOutput, W_RAW,
};
use crate::multigrid::Segments;
use crate::nn::Activation;
use crate::optim::{Adam, AdamConfig, ParamGroup};
use crate::params::{BoundParams, ModelParams, ParamError};
use crate::tensor::{Tensor, TensorError};

pub const EMBEDDING: &str = "emb";
const SOURCE_PREFIX: &str = "src.";

#[derive(Debug, Error)]
pub enum MazeModelError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cg(#[from] CgError),
    #[error(transparent)]
    Maze(#[from] MazeError),
    #[error("non-finite loss at step {step}")]
    NanLoss {
        step: usize,
        /// Parameters after the last finite step.
        last_good: Box<ModelParams>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn maze_cg() -> CgConfig {
    CgConfig {
        max_iters: 5000,
        rel_tol: 1e-6,
        abs_floor: 1e-30,
        jacobi: true,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeModelConfig {
    pub embed_dim: usize,
    pub embed_std: f64,
    pub fields: usize,
    pub rounds: usize,
    pub hidden: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub lambda_over_n: bool,
    pub lambda_floor: f64,
    pub scans: bool,
    pub positions: bool,
    pub decoder_psi: bool,
    pub activation: Activation,
    pub cg: CgConfig,
}

impl Default for MazeModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 4,
            embed_std: 1.0,
            fields: 2,
            rounds: 1,
            hidden: 64,
            encoder_hidden: vec![64, 64],
            head_hidden: vec![64, 64],
            decoder_hidden: vec![100, 100],
            lambda_over_n: true,
            lambda_floor: 1e-3,
            scans: false,
            positions: false,
            decoder_psi: false,
            activation: Activation::Silu,
            cg: maze_cg(),
        }
    }
}

impl MazeModelConfig {
    pub fn layer_config(&self) -> LayerConfig {
        LayerConfig {
            input_dim: self.embed_dim,
            fields: self.fields,
            rounds: self.rounds,
            classes: N_CLASSES,
            hidden: self.hidden,
            encoder_hidden: self.encoder_hidden.clone(),
            head_hidden: self.head_hidden.clone(),
            decoder_hidden: self.decoder_hidden.clone(),
            objects: None,
            feedback: Feedback::default(),
            conductance: ConductanceSource::Input,
            lambda_over_n: self.lambda_over_n,
            lambda_floor: self.lambda_floor,
            scans: self.scans,
            positions: self.positions,
            decoder_psi: self.decoder_psi,
            activation: self.activation,
            cg: self.cg,
        }
    }
}

/// Same-size mazes packed as one disjoint graph.
pub struct MazeBatch {
    pub topology: Arc<GraphTopology>,
    pub types: Arc<[usize]>,
    pub labels: Vec<usize>,
    pub segments: Segments,
    pub positions: Tensor,
    pub height: usize,
    pub width: usize,
}

impl MazeBatch {
    pub fn new(mazes: &[&Maze]) -> Result<Self, MazeModelError> {
        let first = mazes
            .first()
            .ok_or_else(|| MazeModelError::Config("empty batch".into()))?;
        let (h, w) = (first.height, first.width);
        if mazes.iter().any(|m| m.height != h || m.width != w) {
            return Err(MazeModelError::Config("batch mixes maze sizes".into()));
        }
        let grid = grid_topology(h, w, 4)?;
        let parts = vec![&grid; mazes.len()];
        let topology = Arc::new(GraphTopology::disjoint_union(&parts));
        let pos = topology
            .positions()
            .expect("grid topologies carry positions");
        let positions = Tensor::matrix(pos.len(), 2, pos.iter().flatten().copied().collect())?;
        Ok(Self {
            types: mazes
                .iter()
                .flat_map(|m| m.grid.iter().map(|&t| t as usize))
                .collect(),
            labels: mazes
                .iter()
                .flat_map(|m| m.labels.iter().map(|&l| l as usize))
                .collect(),
            segments: Segments::blocks(h * w, mazes.len()),
            topology,
            positions,
            height: h,
            width: w,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.types.len()
    }
}

#[derive(Clone, Debug)]
pub struct MazeModel {
    cfg: MazeModelConfig,
    layer: PoissonLayer,
}

impl MazeModel {
    pub fn register(
        params: &mut ModelParams,
        cfg: &MazeModelConfig,
    ) -> Result<Self, MazeModelError> {
        params.insert_normal(EMBEDDING, &[N_TYPES, cfg.embed_dim], cfg.embed_std)?;
        let layer = PoissonLayer::register(params, &cfg.layer_config())?;
        Ok(Self {
            cfg: cfg.clone(),
            layer,
        })
    }

    /// Fresh parameters from `seed`.
    pub fn init(cfg: &MazeModelConfig, seed: u64) -> Result<(Self, ModelParams), MazeModelError> {
        let mut params = ModelParams::new(seed);
        let model = Self::register(&mut params, cfg)?;
        Ok((model, params))
    }

    pub fn config(&self) -> &MazeModelConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        N_TYPES * self.cfg.embed_dim + self.layer.param_count()
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        batch: &MazeBatch,
    ) -> Result<Vec<RoundOutput<'t>>, MazeModelError> {
        let x = bound.get(EMBEDDING)?.gather_rows(batch.types.clone())?;
        let input = crate::layer::LayerInput {
            x,
            topology: Arc::clone(&batch.topology),
            positions: tape.constant(batch.positions.clone()),
            segments: batch.segments.clone(),
        };
        Ok(self.layer.forward(bound, &input)?)
    }

    /// Mean per-cell cross-entropy of the final round.
    pub fn loss_var<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        batch: &MazeBatch,
    ) -> Result<Var<'t>, MazeModelError> {
        let rounds = self.forward(tape, bound, batch)?;
        let logits = rounds.last().expect("at least one round").logits;
        Ok(logits.cross_entropy(&batch.labels)?)
    }

    pub fn loss(&self, params: &ModelParams, batch: &MazeBatch) -> Result<f64, MazeModelError> {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        Ok(self.loss_var(&tape, &bound, batch)?.value().data()[0])
    }

    /// Final-round logits, `N × 5`.
    pub fn logits(
        &self,
        params: &ModelParams,
        batch: &MazeBatch,
    ) -> Result<Tensor, MazeModelError> {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let rounds = self.forward(&tape, &bound, batch)?;
        Ok((*rounds.last().expect("at least one round").logits.value()).clone())
    }

    /// Argmax class per cell, ties toward the lower class index.
    pub fn predict(
        &self,
        params: &ModelParams,
        mazes: &[Maze],
    ) -> Result<Vec<Vec<u8>>, MazeModelError> {
        const CHUNK: usize = 8;
        let chunks: Vec<&[Maze]> = mazes.chunks(CHUNK).collect();
        let per_chunk = chunks
            .par_iter()
            .map(|chunk| {
                let refs: Vec<&Maze> = chunk.iter().collect();
                let batch = MazeBatch::new(&refs)?;
                let logits = self.logits(params, &batch)?;
                let cls = argmax_rows(&logits);
                Ok(chunk
                    .iter()
                    .enumerate()
                    .map(|(m, maze)| cls[m * maze.cells()..(m + 1) * maze.cells()].to_vec())
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>, MazeModelError>>()?;
        Ok(per_chunk.into_iter().flatten().collect())
    }

    /// Solver inputs the model builds for one maze: one system per field and
    /// the sources `b` (`N × K`).
    pub fn build_system(
        &self,
        params: &ModelParams,
        maze: &Maze,
    ) -> Result<(Vec<ScreenedSystem>, Tensor), MazeModelError> {
        let batch = MazeBatch::new(&[maze])?;
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let rounds = self.forward(&tape, &bound, &batch)?;
        let r = rounds.last().expect("at least one round");
        let w: Arc<[f64]> = r.w.value().data().into();
        let lambda = r.lambda.value();
        let systems = (0..self.cfg.fields)
            .map(|k| {
                ScreenedSystem::new(Arc::clone(&batch.topology), Arc::clone(&w), lambda.col(k))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((systems, (*r.b.value()).clone()))
    }

    /// Mean learned conductance by edge class for one maze.
    pub fn conductance_structure(
        &self,
        params: &ModelParams,
        maze: &Maze,
        map: TypeMap,
    ) -> Result<ConductanceStructure, MazeModelError> {
        let (systems, _) = self.build_system(params, maze)?;
        let sys = &systems[0];
        let wall = |i: usize| map.role(maze.grid[i]) == Some(Role::Wall);
        let mut sums = [(0.0, 0usize); 3];
        for ((i, j), &w) in sys.topology().edges().zip(sys.conductances().iter()) {
            let class = match (wall(i), wall(j)) {
                (true, true) => 0,
                (true, false) | (false, true) => 1,
                (false, false) => 2,
            };
            sums[class].0 += w;
            sums[class].1 += 1;
        }
        let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
        Ok(ConductanceStructure {
            wall_incident: mean((sums[0].0 + sums[1].0, sums[0].1 + sums[1].1)),
            wall_open: mean(sums[1]),
            open_open: mean(sums[2]),
        })
    }
}

/// Conductance between every pair of type indices, `softplus(e_aᵀ W_sym e_b)`.
pub fn type_conductances(
    params: &ModelParams,
) -> Result<[[f64; N_TYPES]; N_TYPES], MazeModelError> {
    let emb = params.get(EMBEDDING)?;
    let ws = symmetric_form(params.get(W_RAW)?)?;
    let d = emb.cols();
    let mut out = [[0.0; N_TYPES]; N_TYPES];
    for (a, row) in out.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (ea, eb) = (emb.row(a), emb.row(b));
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc += ea[i] * ws.data()[i * d + j] * eb[j];
                }
            }
            *v = softplus_f64(acc);
        }
    }
    Ok(out)
}

/// Mean conductance over wall-incident edges, over edges between a wall and
/// a non-wall cell, and over edges between two non-wall cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConductanceStructure {
    pub wall_incident: f64,
    pub wall_open: f64,
    pub open_open: f64,
}

pub fn argmax_rows(t: &Tensor) -> Vec<u8> {
    (0..t.rows())
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct F1Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl F1Counts {
    pub fn add(&mut self, o: F1Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    /// `2TP / (2TP + FP + FN)`; 1 when there is nothing to find and nothing
    /// was predicted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub fn is_positive(class: u8, include_endpoints: bool) -> bool {
    class == CLASS_PATH || (include_endpoints && (class == CLASS_SOURCE || class == CLASS_GOAL))
}

pub fn f1_counts(pred: &[u8], truth: &[u8], include_endpoints: bool) -> F1Counts {
    let mut c = F1Counts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (
            is_positive(p, include_endpoints),
            is_positive(t, include_endpoints),
        ) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct F1Report {
    /// Micro-averaged over all cells of all mazes.
    pub f1: f64,
    pub counts: F1Counts,
    pub per_maze: Vec<f64>,
    pub mazes: usize,
    pub height: usize,
    pub width: usize,
}

pub fn f1_report(preds: &[Vec<u8>], mazes: &[Maze], include_endpoints: bool) -> F1Report {
    let mut total = F1Counts::default();
    let per_maze = preds
        .iter()
        .zip(mazes)
        .map(|(p, m)| {
            let c = f1_counts(p, &m.labels, include_endpoints);
            total.add(c);
            c.f1()
        })
        .collect();
    F1Report {
        f1: total.f1(),
        counts: total,
        per_maze,
        mazes: mazes.len(),
        height: mazes.first().map_or(0, |m| m.height),
        width: mazes.first().map_or(0, |m| m.width),
    }
}

pub fn evaluate_f1(
    model: &MazeModel,
    params: &ModelParams,
    mazes: &[Maze],
    include_endpoints: bool,
) -> Result<F1Report, MazeModelError> {
    let preds = model.predict(params, mazes)?;
    Ok(f1_report(&preds, mazes, include_endpoints))
}

/// F1 on `n_eval` fresh `size × size` mazes; no parameter updates.
pub fn size_generalization(
    model: &MazeModel,
    params: &ModelParams,
    size: usize,
    n_eval: usize,
    seed: u64,
) -> Result<F1Report, MazeModelError> {
    let mazes = generate_corpus(size, size, n_eval, seed)?;
    evaluate_f1(model, params, &mazes, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: MazeModelConfig,
    pub adam: AdamConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub train_mazes: usize,
    pub size: usize,
    /// Learning-rate multiplier for the type embedding, `W_raw` and the
    /// source head.
    pub physics_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: MazeModelConfig::default(),
            adam: AdamConfig::default(),
            steps: 3000,
            batch_size: 8,
            train_mazes: 100,
            size: 9,
            physics_lr_scale: 5.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

fn optimizer(cfg: &TrainConfig, params: &ModelParams) -> Result<Adam, MazeModelError> {
    let fast: BTreeSet<String> = params
        .names()
        .filter(|n| *n == EMBEDDING || *n == W_RAW || n.starts_with(SOURCE_PREFIX))
        .map(str::to_string)
        .collect();
    let rest = params
        .names()
        .filter(|n| !fast.contains(*n))
        .map(str::to_string)
        .collect();
    let groups = vec![
        ParamGroup {
            names: fast,
            lr_scale: cfg.physics_lr_scale,
        },
        ParamGroup {
            names: rest,
            lr_scale: 1.0,
        },
    ];
    Ok(Adam::with_groups(cfg.adam.clone(), groups, params)?)
}

/// Trains on `corpus`; deterministic given `seed`.
pub fn train(
    corpus: &[Maze],
    cfg: &TrainConfig,
    seed: u64,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(MazeModel, ModelParams, TrainLog), MazeModelError> {
    if corpus.is_empty() || cfg.batch_size == 0 {
        return Err(MazeModelError::Config(
            "empty corpus or zero batch size".into(),
        ));
    }
    let (model, mut params) = MazeModel::init(&cfg.model, seed)?;
    let mut opt = optimizer(cfg, &params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size.min(corpus.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(&corpus[order[cursor]]);
            cursor += 1;
        }
        let batch = MazeBatch::new(&picked)?;
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let loss = model.loss_var(&tape, &bound, &batch)?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(MazeModelError::NanLoss {
                step,
                last_good: Box::new(params),
            });
        }
        let grads = tape.backward(loss)?;
        params.accumulate(&bound, &grads)?;
        opt.step(&mut params);
        log.losses.push(value);
        on_step(step, value);
    }
    Ok((model, params, log))
}

/// Training corpus seed for a run seeded with `seed`.
pub fn corpus_seed(seed: u64) -> u64 {
    seed.wrapping_add(1000)
}

/// Seed of the held-out mazes at the training size.
pub const HELD_OUT_SEED: u64 = 777;
/// Seed of the mazes at the transfer size.
pub const TRANSFER_SEED: u64 = 778;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub eval_size: usize,
    pub n_eval: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            eval_size: 19,
            n_eval: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferRun {
    pub seed: u64,
    pub lambda_over_n: bool,
    pub final_loss: f64,
    /// Held-out F1 at the training size.
    pub f1_held_out: f64,
    /// F1 at the transfer size.
    pub f1_transfer: f64,
    pub conductance: ConductanceStructure,
    pub seconds: f64,
}

/// Trains one model on the seeded corpus and scores it at the training size
/// and at `eval_size`.
pub fn transfer_run(
    cfg: &TransferConfig,
    seed: u64,
    lambda_over_n: bool,
) -> Result<(TransferRun, MazeModel, ModelParams), MazeModelError> {
    let start = std::time::Instant::now();
    let mut train_cfg = cfg.train.clone();
    train_cfg.model.lambda_over_n = lambda_over_n;
    let corpus = generate_corpus(
        train_cfg.size,
        train_cfg.size,
        train_cfg.train_mazes,
        corpus_seed(seed),
    )?;
    let (model, params, log) = train(&corpus, &train_cfg, seed, |_, _| {})?;
    let held = size_generalization(&model, &params, train_cfg.size, cfg.n_eval, HELD_OUT_SEED)?;
    let far = size_generalization(&model, &params, cfg.eval_size, cfg.n_eval, TRANSFER_SEED)?;
    let conductance = model.conductance_structure(&params, &corpus[0], TypeMap::default())?;
    let run = TransferRun {
        seed,
        lambda_over_n,
        final_loss: log.losses.last().copied().unwrap_or(f64::NAN),
        f1_held_out: held.f1,
        f1_transfer: far.f1,
        conductance,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((run, model, params))
}

/// Conductance for wall-incident edges in the harmonic baseline.
pub const BASELINE_WALL_W: f64 = 1e-4;
pub const BASELINE_LAMBDA: f64 = 1e-4;

/// Hand-set Poisson solve: unit corridor conductances, `+1` at the source and
/// `−1` at the goal, non-wall cells with `|ψ|/max|ψ| ≥ threshold` marked on
/// the path.
pub fn harmonic_baseline(
    maze: &Maze,
    map: TypeMap,
    threshold: f64,
) -> Result<Vec<u8>, MazeModelError> {
    let topo = Arc::new(grid_topology(maze.height, maze.width, 4)?);
    let roles: Vec<Role> = maze
        .grid
        .iter()
        .map(|&t| {
            map.role(t)
                .ok_or_else(|| MazeError::Invalid(format!("type {t}")))
        })
        .collect::<Result<_, _>>()?;
    let w: Arc<[f64]> = topo
        .edges()
        .map(|(i, j)| {
            if roles[i] == Role::Wall || roles[j] == Role::Wall {
                BASELINE_WALL_W
            } else {
                1.0
            }
        })
        .collect();
    let sys = ScreenedSystem::new(topo, w, vec![BASELINE_LAMBDA; maze.cells()])?;
    let b: Vec<f64> = roles
        .iter()
        .map(|r| match r {
            Role::Source => 1.0,
            Role::Goal => -1.0,
            _ => 0.0,
        })
        .collect();
    let cfg = CgConfig {
        max_iters: 20 * maze.cells(),
        rel_tol: 1e-10,
        abs_floor: 1e-30,
        jacobi: true,
    };
    let psi = cg_solve(&sys, &b, &cfg)?.solution;
    let peak = psi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(roles
        .iter()
        .zip(&psi)
        .map(|(role, &p)| match role {
            Role::Wall => CLASS_WALL,
            _ if peak > 0.0 && p.abs() / peak >= threshold => match role {
                Role::Source => CLASS_SOURCE,
                Role::Goal => CLASS_GOAL,
                _ => CLASS_PATH,
            },
            _ => CLASS_OFF_PATH,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count_near_target() {
        let (model, params) = MazeModel::init(&MazeModelConfig::default(), 0).unwrap();
        assert_eq!(model.param_count(), params.count());
        let n = params.count() as f64;
        assert!((n - 43_800.0).abs() <= 4_380.0, "{n}");
    }

    #[test]
    fn f1_edge_cases() {
        let truth = vec![
            CLASS_SOURCE,
            CLASS_PATH,
            CLASS_GOAL,
            CLASS_OFF_PATH,
            CLASS_WALL,
        ];
        assert_eq!(f1_counts(&truth, &truth, true).f1(), 1.0);
        let none = vec![CLASS_OFF_PATH; 5];
        assert_eq!(f1_counts(&none, &truth, true).f1(), 0.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::from_rows(&[vec![0.0; 5], vec![0.0, 2.0, 2.0, 0.0, 0.0]]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1]);
    }
}
