//! Recurrent screened-Poisson layer.
//!
//! One round: encode cells, derive conductances from a symmetric bilinear
//! form, predict damping and sources, solve `K` fields, read out dissipation
//! and directional scans, optionally run the object V-cycle, decode, and feed
//! the annealed softmax back into the next round.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{concat_cols, softplus_f64, Var};
use crate::cg::{poisson_solve, CgConfig, CgError, SolveRecord};
use crate::graph::{GraphError, GraphTopology, GridShape, ScreenedSystem};
use crate::multigrid::{MultigridError, ObjectConfig, ObjectLayer, ObjectOutput, Segments};
use crate::nn::{Activation, Mlp, NnError};
use crate::params::{BoundParams, ModelParams, ParamError};
use crate::tensor::{Tensor, TensorError};

/// Variance floor used when standardizing fields.
pub const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Cg(#[from] CgError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Multigrid(#[from] MultigridError),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid layer configuration: {0}")]
    Config(String),
}

impl From<NnError> for LayerError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Param(p) => Self::Param(p),
            NnError::Tensor(t) => Self::Tensor(t),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub tau_start: f64,
    pub tau_end: f64,
}

impl Default for Feedback {
    fn default() -> Self {
        Self {
            tau_start: 1.0,
            tau_end: 0.2,
        }
    }
}

/// Which per-node features feed the bilinear conductance form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConductanceSource {
    /// Encoder output `h`.
    #[default]
    Hidden,
    /// Raw cell input `x` (type embeddings in the maze model).
    Input,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub input_dim: usize,
    pub fields: usize,
    pub rounds: usize,
    pub classes: usize,
    /// Width of `h`.
    pub hidden: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    #[serde(default)]
    pub objects: Option<ObjectConfig>,
    #[serde(default)]
    pub feedback: Feedback,
    #[serde(default)]
    pub conductance: ConductanceSource,
    #[serde(default)]
    pub lambda_over_n: bool,
    /// Added to the damping head's softplus output before any `1/N` scaling.
    #[serde(default)]
    pub lambda_floor: f64,
    #[serde(default = "yes")]
    pub scans: bool,
    /// Feed node positions to the encoder, the heads and the decoder.
    #[serde(default = "yes")]
    pub positions: bool,
    /// Feed the raw solved fields to the decoder.
    #[serde(default = "yes")]
    pub decoder_psi: bool,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub cg: CgConfig,
}

fn yes() -> bool {
    true
}

impl LayerConfig {
    pub fn validate(&self) -> Result<(), LayerError> {
        let bad = |m: &str| Err(LayerError::Config(m.to_string()));
        if self.fields == 0 || self.rounds == 0 || self.classes == 0 || self.hidden == 0 {
            return bad("fields, rounds, classes and hidden must be ≥ 1");
        }
        if self.input_dim == 0 {
            return bad("input_dim must be ≥ 1");
        }
        let fb = self.feedback;
        if !(self.lambda_floor >= 0.0 && self.lambda_floor.is_finite()) {
            return bad("lambda_floor must be finite and nonnegative");
        }
        if !(fb.tau_start > 0.0 && fb.tau_end > 0.0) {
            return bad("feedback temperatures must be positive");
        }
        self.cg.validate()?;
        Ok(())
    }

    fn scan_width(&self) -> usize {
        if self.scans {
            8 * self.fields
        } else {
            0
        }
    }

    fn object_width(&self) -> usize {
        if self.objects.is_some() {
            self.fields
        } else {
            0
        }
    }

    fn position_width(&self) -> usize {
        if self.positions {
            2
        } else {
            0
        }
    }

    /// `[x, prev soft, p, r/(R−1)]`.
    pub fn encoder_input(&self) -> usize {
        self.input_dim + self.classes + self.position_width() + 1
    }

    /// `[h, p, prev ψ, scans(prev ψ), mean/var across fields, prev u]`.
    pub fn rich_width(&self) -> usize {
        self.hidden
            + self.position_width()
            + self.fields
            + self.scan_width()
            + 2
            + self.object_width()
    }

    /// `[ψ, D, h, p, scans(ψ), u]`.
    pub fn decoder_input(&self) -> usize {
        let psi = if self.decoder_psi { self.fields } else { 0 };
        psi + self.fields
            + self.hidden
            + self.position_width()
            + self.scan_width()
            + self.object_width()
    }

    fn conductance_dim(&self) -> usize {
        match self.conductance {
            ConductanceSource::Hidden => self.hidden,
            ConductanceSource::Input => self.input_dim,
        }
    }
}

/// `τ_r`, linear from `tau_start` at `r = 0` to `tau_end` at `r = R−1`;
/// `tau_start` when `R = 1`.
pub fn feedback_tau(r: usize, rounds: usize, fb: Feedback) -> f64 {
    let f = round_fraction(r, rounds);
    fb.tau_start * (1.0 - f) + fb.tau_end * f
}

/// `r/(R−1)`, zero for a single round.
pub fn round_fraction(r: usize, rounds: usize) -> f64 {
    if rounds <= 1 {
        0.0
    } else {
        r as f64 / (rounds - 1) as f64
    }
}

/// `relu((W + Wᵀ)/2)`.
pub fn symmetric_form(w_raw: &Tensor) -> Result<Tensor, TensorError> {
    let t = w_raw.transpose()?;
    w_raw.zip_map(&t, |a, b| (0.5 * (a + b)).max(0.0))
}

/// `w_ij = softplus(h_iᵀ W_sym h_j)` for every edge.
pub fn conductances(
    h: &Tensor,
    w_raw: &Tensor,
    topology: &GraphTopology,
) -> Result<Vec<f64>, LayerError> {
    let (n, d) = h.dims2()?;
    if n != topology.n_nodes() || w_raw.shape() != [d, d] {
        return Err(TensorError::Dimension {
            op: "conductances",
            detail: format!(
                "h {:?}, W_raw {:?}, {} nodes",
                h.shape(),
                w_raw.shape(),
                topology.n_nodes()
            ),
        }
        .into());
    }
    let hw = h.matmul(&symmetric_form(w_raw)?)?;
    Ok(topology
        .edges()
        .map(|(i, j)| softplus_f64(hw.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b).sum()))
        .collect())
}

pub fn conductances_var<'t>(
    h: Var<'t>,
    w_raw: Var<'t>,
    topology: &GraphTopology,
) -> Result<Var<'t>, TensorError> {
    let w_sym = w_raw.add(w_raw.transpose()?)?.scale(0.5).relu();
    let hs = h.gather_rows(topology.sources())?;
    let hd = h.gather_rows(topology.targets())?;
    Ok(hs.matmul(w_sym)?.mul(hd)?.sum_rows()?.softplus())
}

/// `D_k(i) = Σ_{j∈N(i)} w_ij (ψ_k(i) − ψ_k(j))²` for an `N × K` field matrix.
pub fn dissipation_readout(sys: &ScreenedSystem, psi: &Tensor) -> Result<Tensor, LayerError> {
    let (n, k) = psi.dims2()?;
    if n != sys.n_nodes() {
        return Err(
            GraphError::Dimension(format!("psi has {n} rows for {} nodes", sys.n_nodes())).into(),
        );
    }
    let mut out = Tensor::zeros(&[n, k]);
    for ((i, j), &w) in sys.topology().edges().zip(sys.conductances().iter()) {
        for f in 0..k {
            let d = psi.get(i, f) - psi.get(j, f);
            let e = w * d * d;
            out.set(i, f, out.get(i, f) + e);
            out.set(j, f, out.get(j, f) + e);
        }
    }
    Ok(out)
}

pub fn dissipation_var<'t>(
    topology: &GraphTopology,
    w: Var<'t>,
    psi: Var<'t>,
) -> Result<Var<'t>, TensorError> {
    let n = topology.n_nodes();
    let (src, dst) = (topology.sources(), topology.targets());
    let diff = psi
        .gather_rows(src.clone())?
        .sub(psi.gather_rows(dst.clone())?)?;
    let e = diff.square().mul(w)?;
    e.scatter_add_rows(src, n)?.add(e.scatter_add_rows(dst, n)?)
}

/// Per-segment, per-field standardization `(ψ − μ)/sqrt(var + ε)`.
pub fn normalize_fields(psi: &Tensor, seg: &Segments) -> Result<Tensor, TensorError> {
    let (n, k) = psi.dims2()?;
    let ns = seg.n_segments();
    let mut mean = vec![0.0; ns * k];
    let mut var = vec![0.0; ns * k];
    for i in 0..n {
        let s = seg.index[i];
        for f in 0..k {
            mean[s * k + f] += psi.get(i, f);
        }
    }
    for s in 0..ns {
        for f in 0..k {
            mean[s * k + f] /= seg.counts[s].max(1) as f64;
        }
    }
    for i in 0..n {
        let s = seg.index[i];
        for f in 0..k {
            let d = psi.get(i, f) - mean[s * k + f];
            var[s * k + f] += d * d;
        }
    }
    let mut out = Tensor::zeros(&[n, k]);
    for i in 0..n {
        let s = seg.index[i];
        for f in 0..k {
            let v = var[s * k + f] / seg.counts[s].max(1) as f64;
            out.set(
                i,
                f,
                (psi.get(i, f) - mean[s * k + f]) / (v + NORM_EPS).sqrt(),
            );
        }
    }
    Ok(out)
}

pub fn normalize_fields_var<'t>(psi: Var<'t>, seg: &Segments) -> Result<Var<'t>, TensorError> {
    let tape = psi.tape();
    let ns = seg.n_segments();
    let counts = tape.constant(Tensor::column(
        seg.counts.iter().map(|&c| c.max(1) as f64).collect(),
    ));
    let mean = psi
        .scatter_add_rows(seg.index.clone(), ns)?
        .div(counts)?
        .gather_rows(seg.index.clone())?;
    let centered = psi.sub(mean)?;
    let std = centered
        .square()
        .scatter_add_rows(seg.index.clone(), ns)?
        .div(counts)?
        .add_scalar(NORM_EPS)
        .sqrt()
        .gather_rows(seg.index.clone())?;
    centered.div(std)
}

/// Scan directions as `(d_row, d_col)`: N, S, E, W, NE, NW, SE, SW.
pub const DIRECTIONS: [(isize, isize); 8] = [
    (-1, 0),
    (1, 0),
    (0, 1),
    (0, -1),
    (-1, 1),
    (-1, -1),
    (1, 1),
    (1, -1),
];

/// Index of the direction opposite to `d` in [`DIRECTIONS`].
fn opposite(d: usize) -> usize {
    [1, 0, 3, 2, 7, 6, 5, 4][d]
}

fn check_grid(n: usize, grid: Option<GridShape>) -> Result<GridShape, LayerError> {
    let g = grid
        .ok_or_else(|| LayerError::Unsupported("directional scans need a grid topology".into()))?;
    if g.cells() * g.copies != n {
        return Err(LayerError::Unsupported(format!(
            "grid {}×{}×{} does not cover {n} nodes",
            g.height, g.width, g.copies
        )));
    }
    Ok(g)
}

/// Exclusive sum along one direction: each cell receives the sum of the cells
/// strictly behind it on its ray. `x` is `N × K`; the result is written into
/// columns `col0..col0+K` of `out` (row width `out_cols`).
fn exclusive_ray_sum(
    x: &[f64],
    k: usize,
    grid: GridShape,
    (dr, dc): (isize, isize),
    out: &mut [f64],
    out_cols: usize,
    col0: usize,
) {
    let (h, w) = (grid.height as isize, grid.width as isize);
    let per = (h * w) as usize;
    let rows: Vec<isize> = if dr >= 0 {
        (0..h).collect()
    } else {
        (0..h).rev().collect()
    };
    let cols: Vec<isize> = if dc >= 0 {
        (0..w).collect()
    } else {
        (0..w).rev().collect()
    };
    for copy in 0..grid.copies {
        let base = copy * per;
        for &r in &rows {
            for &c in &cols {
                let (pr, pc) = (r - dr, c - dc);
                let i = base + (r * w + c) as usize;
                if pr < 0 || pr >= h || pc < 0 || pc >= w {
                    for f in 0..k {
                        out[i * out_cols + col0 + f] = 0.0;
                    }
                    continue;
                }
                let p = base + (pr * w + pc) as usize;
                for f in 0..k {
                    out[i * out_cols + col0 + f] = x[p * k + f] + out[p * out_cols + col0 + f];
                }
            }
        }
    }
}

/// Eight exclusive directional sums of an already-standardized field, `N × 8K`
/// with column `d·K + k`.
pub fn scan_features(field: &Tensor, grid: GridShape) -> Result<Tensor, LayerError> {
    let (n, k) = field.dims2()?;
    let grid = check_grid(n, Some(grid))?;
    let mut out = Tensor::zeros(&[n, 8 * k]);
    for (d, &dir) in DIRECTIONS.iter().enumerate() {
        exclusive_ray_sum(field.data(), k, grid, dir, out.data_mut(), 8 * k, d * k);
    }
    Ok(out)
}

/// Standardize each field over its grid copy, then scan in eight directions.
pub fn directional_scans(psi: &Tensor, topology: &GraphTopology) -> Result<Tensor, LayerError> {
    let grid = check_grid(psi.rows(), topology.grid())?;
    let seg = Segments::blocks(grid.height * grid.width, grid.copies);
    scan_features(&normalize_fields(psi, &seg)?, grid)
}

/// Differentiable [`scan_features`]; the adjoint of a ray sum is the ray sum
/// in the opposite direction.
pub fn scan_features_var<'t>(field: Var<'t>, grid: GridShape) -> Result<Var<'t>, LayerError> {
    let value = scan_features(&field.value(), grid)?;
    let (n, k) = value.dims2().map(|(n, c)| (n, c / 8))?;
    Ok(field
        .tape()
        .custom("directional_scans", &[field], value, move |g| {
            let mut out = vec![0.0; n * k];
            let mut tmp = vec![0.0; n * k];
            let mut slice = vec![0.0; n * k];
            for d in 0..8 {
                for i in 0..n {
                    slice[i * k..(i + 1) * k].copy_from_slice(&g.row(i)[d * k..(d + 1) * k]);
                }
                exclusive_ray_sum(&slice, k, grid, DIRECTIONS[opposite(d)], &mut tmp, k, 0);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o += t;
                }
            }
            Ok(vec![Tensor::matrix(n, k, out)?])
        }))
}

/// Per-node mean and variance across the `K` fields, `N × 2`.
pub fn cross_field_stats_var<'t>(psi: Var<'t>) -> Result<Var<'t>, TensorError> {
    let k = psi.value().cols() as f64;
    let mean = psi.sum_rows()?.scale(1.0 / k);
    let var = psi.sub(mean)?.square().sum_rows()?.scale(1.0 / k);
    concat_cols(&[mean, var])
}

/// Plain snapshot of a round, mirroring the recurrent state.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundState {
    pub h: Tensor,
    pub psi: Tensor,
    pub prev_soft: Tensor,
    pub round: usize,
    pub rounds: usize,
    pub tau: f64,
}

/// Graph-level inputs shared by all rounds.
pub struct LayerInput<'t> {
    /// `N × input_dim` cell inputs.
    pub x: Var<'t>,
    pub topology: Arc<GraphTopology>,
    /// `N × 2` constant positions.
    pub positions: Var<'t>,
    pub segments: Segments,
}

/// Values carried from one round into the next.
#[derive(Clone, Copy)]
pub struct Carry<'t> {
    pub prev_soft: Var<'t>,
    pub prev_psi: Var<'t>,
    pub prev_u: Option<Var<'t>>,
}

pub struct RoundOutput<'t> {
    pub round: usize,
    pub tau: f64,
    pub h: Var<'t>,
    pub w: Var<'t>,
    pub lambda: Var<'t>,
    pub b: Var<'t>,
    pub psi: Var<'t>,
    pub dissipation: Var<'t>,
    pub scans: Option<Var<'t>>,
    pub logits: Var<'t>,
    pub soft: Var<'t>,
    pub records: Vec<SolveRecord>,
    pub objects: Option<ObjectOutput<'t>>,
    /// Input to the next round.
    pub carry: Carry<'t>,
}

impl RoundOutput<'_> {
    pub fn state(&self, rounds: usize, prev_soft: &Tensor) -> RoundState {
        RoundState {
            h: (*self.h.value()).clone(),
            psi: (*self.psi.value()).clone(),
            prev_soft: prev_soft.clone(),
            round: self.round,
            rounds,
            tau: self.tau,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoissonLayer {
    cfg: LayerConfig,
    encoder: Mlp,
    damp: Mlp,
    source: Mlp,
    decoder: Mlp,
    objects: Option<ObjectLayer>,
}

fn widths(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(first);
    v.extend_from_slice(hidden);
    v.push(last);
    v
}

pub const W_RAW: &str = "w_raw";

impl PoissonLayer {
    /// Registers all heads in `params`. The decoder's last layer starts at
    /// zero so the initial prediction is uniform.
    pub fn register(params: &mut ModelParams, cfg: &LayerConfig) -> Result<Self, LayerError> {
        cfg.validate()?;
        let act = cfg.activation;
        let encoder = Mlp::register(
            params,
            "enc",
            &widths(cfg.encoder_input(), &cfg.encoder_hidden, cfg.hidden),
            act,
            false,
        )?;
        let d = cfg.conductance_dim();
        // Nonnegative start so every entry of the rectified form is active.
        params.insert_glorot(W_RAW, d, d, 1.0)?;
        params
            .get_mut(W_RAW)?
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = v.abs());
        let rich = cfg.rich_width();
        let damp = Mlp::register(
            params,
            "damp",
            &widths(rich, &cfg.head_hidden, cfg.fields),
            act,
            false,
        )?;
        let source = Mlp::register(
            params,
            "src",
            &widths(rich, &cfg.head_hidden, cfg.fields),
            act,
            false,
        )?;
        let decoder = Mlp::register(
            params,
            "dec",
            &widths(cfg.decoder_input(), &cfg.decoder_hidden, cfg.classes),
            act,
            true,
        )?;
        let objects = match &cfg.objects {
            Some(oc) => Some(ObjectLayer::register(
                params,
                "obj",
                oc,
                cfg.fields,
                2 * cfg.fields + cfg.hidden,
                act,
            )?),
            None => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            damp,
            source,
            decoder,
            objects,
        })
    }

    pub fn config(&self) -> &LayerConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        let d = self.cfg.conductance_dim();
        self.encoder.param_count()
            + d * d
            + self.damp.param_count()
            + self.source.param_count()
            + self.decoder.param_count()
            + self.objects.as_ref().map_or(0, ObjectLayer::param_count)
    }

    /// Zero state for round 0: uniform predictions, zero fields.
    pub fn cold_start<'t>(&self, input: &LayerInput<'t>) -> Carry<'t> {
        let tape = input.x.tape();
        let n = input.topology.n_nodes();
        let c = self.cfg.classes;
        Carry {
            prev_soft: tape.constant(Tensor::full(&[n, c], 1.0 / c as f64)),
            prev_psi: tape.constant(Tensor::zeros(&[n, self.cfg.fields])),
            prev_u: self
                .objects
                .as_ref()
                .map(|_| tape.constant(Tensor::zeros(&[n, self.cfg.fields]))),
        }
    }

    fn lambda_scale(&self, seg: &Segments) -> Tensor {
        Tensor::column(
            seg.index
                .iter()
                .map(|&s| 1.0 / seg.counts[s].max(1) as f64)
                .collect(),
        )
    }

    /// Runs round `r` of `R = cfg.rounds`.
    pub fn run_round<'t>(
        &self,
        bound: &BoundParams<'t>,
        input: &LayerInput<'t>,
        carry: Carry<'t>,
        r: usize,
    ) -> Result<RoundOutput<'t>, LayerError> {
        let cfg = &self.cfg;
        let tape = input.x.tape();
        let topo = &input.topology;
        let n = topo.n_nodes();
        let seg = &input.segments;
        if seg.n_nodes() != n || input.x.value().rows() != n {
            return Err(LayerError::Config(format!(
                "{n} nodes but {} segment entries and {} input rows",
                seg.n_nodes(),
                input.x.value().rows()
            )));
        }
        let grid = if cfg.scans {
            Some(check_grid(n, topo.grid())?)
        } else {
            None
        };
        let frac = tape.constant(Tensor::full(&[n, 1], round_fraction(r, cfg.rounds)));
        let pos: &[Var<'t>] = if cfg.positions {
            std::slice::from_ref(&input.positions)
        } else {
            &[]
        };
        let enc_in = concat_cols(&[&[input.x, carry.prev_soft], pos, &[frac]].concat())?;
        let h = self.encoder.forward(bound, enc_in)?;

        let cond_feat = match cfg.conductance {
            ConductanceSource::Hidden => h,
            ConductanceSource::Input => input.x,
        };
        let w = conductances_var(cond_feat, bound.get(W_RAW)?, topo)?;

        let mut rich = [&[h], pos, &[carry.prev_psi]].concat();
        if let Some(g) = grid {
            rich.push(scan_features_var(
                normalize_fields_var(carry.prev_psi, seg)?,
                g,
            )?);
        }
        rich.push(cross_field_stats_var(carry.prev_psi)?);
        if let Some(u) = carry.prev_u {
            rich.push(u);
        }
        let rich = concat_cols(&rich)?;
        let mut lambda = self.damp.forward(bound, rich)?.softplus();
        if cfg.lambda_floor > 0.0 {
            lambda = lambda.add_scalar(cfg.lambda_floor);
        }
        if cfg.lambda_over_n {
            lambda = lambda.mul(tape.constant(self.lambda_scale(seg)))?;
        }
        let b = self.source.forward(bound, rich)?;

        let (psi, records) = poisson_solve(topo, w, lambda, b, &cfg.cg)?;
        let dissipation = dissipation_var(topo, w, psi)?;
        let psi_tilde = normalize_fields_var(psi, seg)?;
        let scans = match grid {
            Some(g) => Some(scan_features_var(psi_tilde, g)?),
            None => None,
        };
        let objects = match &self.objects {
            Some(layer) => {
                let feats = concat_cols(&[psi, dissipation, h])?;
                Some(layer.vcycle(bound, psi_tilde, input.positions, feats, seg, &cfg.cg)?)
            }
            None => None,
        };

        let mut dec_in = if cfg.decoder_psi {
            vec![psi]
        } else {
            Vec::new()
        };
        dec_in.extend([dissipation, h]);
        dec_in.extend_from_slice(pos);
        if let Some(s) = scans {
            dec_in.push(s);
        }
        if let Some(o) = &objects {
            dec_in.push(o.u);
        }
        let logits = self.decoder.forward(bound, concat_cols(&dec_in)?)?;
        let tau = feedback_tau(r, cfg.rounds, cfg.feedback);
        let soft = logits.scale(1.0 / tau).softmax()?;
        Ok(RoundOutput {
            round: r,
            tau,
            h,
            w,
            lambda,
            b,
            psi,
            dissipation,
            scans,
            logits,
            soft,
            records,
            carry: Carry {
                prev_soft: soft,
                prev_psi: psi,
                prev_u: objects.as_ref().map(|o| o.u),
            },
            objects,
        })
    }

    /// All `R` rounds from a cold start.
    pub fn forward<'t>(
        &self,
        bound: &BoundParams<'t>,
        input: &LayerInput<'t>,
    ) -> Result<Vec<RoundOutput<'t>>, LayerError> {
        let mut carry = self.cold_start(input);
        let mut out = Vec::with_capacity(self.cfg.rounds);
        for r in 0..self.cfg.rounds {
            let round = self.run_round(bound, input, carry, r)?;
            carry = round.carry;
            out.push(round);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::grid_topology;

    #[test]
    fn tau_schedule() {
        let fb = Feedback::default();
        assert_eq!(feedback_tau(0, 32, fb), 1.0);
        assert!((feedback_tau(31, 32, fb) - 0.2).abs() < 1e-15);
        assert!((feedback_tau(16, 32, fb) - 0.587).abs() < 1e-3);
        assert_eq!(feedback_tau(0, 1, fb), 1.0);
        assert_eq!(round_fraction(0, 1), 0.0);
    }

    #[test]
    fn conductance_examples() {
        let topo = grid_topology(2, 2, 4).unwrap();
        let h = Tensor::zeros(&[4, 3]);
        let w_raw = Tensor::from_rows(&[
            vec![0.3, 1.0, -2.0],
            vec![0.2, 0.1, 0.0],
            vec![4.0, 1.0, 1.0],
        ])
        .unwrap();
        for w in conductances(&h, &w_raw, &topo).unwrap() {
            assert_eq!(w, 2f64.ln());
        }
        let anti = Tensor::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let h = Tensor::from_rows(&[
            vec![1.0, 2.0],
            vec![-3.0, 0.5],
            vec![0.1, 0.1],
            vec![2.0, 2.0],
        ])
        .unwrap();
        for w in conductances(&h, &anti, &topo).unwrap() {
            assert_eq!(w, 2f64.ln());
        }
    }

    #[test]
    fn dissipation_examples() {
        let topo = Arc::new(GraphTopology::new(2, &[(0, 1)]).unwrap());
        let sys = ScreenedSystem::new(topo, vec![1.0].into(), vec![1.0, 1.0]).unwrap();
        let d = dissipation_readout(&sys, &Tensor::column(vec![1.0, 0.0])).unwrap();
        assert_eq!(d.data(), &[1.0, 1.0]);
        let d = dissipation_readout(&sys, &Tensor::column(vec![2.0, 2.0])).unwrap();
        assert_eq!(d.data(), &[0.0, 0.0]);
    }

    #[test]
    fn scan_examples() {
        let grid = GridShape {
            height: 1,
            width: 3,
            copies: 1,
        };
        let f = Tensor::column(vec![1.0, 2.0, 4.0]);
        let s = scan_features(&f, grid).unwrap();
        let east: Vec<f64> = (0..3).map(|i| s.get(i, 2)).collect();
        let west: Vec<f64> = (0..3).map(|i| s.get(i, 3)).collect();
        assert_eq!(east, vec![0.0, 1.0, 3.0]);
        assert_eq!(west, vec![6.0, 4.0, 0.0]);
        let topo = grid_topology(3, 3, 4).unwrap();
        let c = directional_scans(&Tensor::full(&[9, 2], 5.0), &topo).unwrap();
        assert!(c.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scans_need_grid() {
        let topo = GraphTopology::new(3, &[(0, 1)]).unwrap();
        assert!(matches!(
            directional_scans(&Tensor::zeros(&[3, 1]), &topo),
            Err(LayerError::Unsupported(_))
        ));
    }
}
