//! Two-level learned multigrid: soft assignment of cells to objects,
//! restriction, a coarse screened-Poisson solve on the complete object graph,
//! and prolongation back to cells.
//!
//! Batches are handled through segments: each node belongs to one graph
//! (segment) and every segment owns its own `K_obj` objects. Object rows are
//! laid out segment-major, `s·K_obj + k`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{concat_cols, Var};
use crate::cg::{poisson_solve, CgConfig, CgError, SolveRecord};
use crate::graph::GraphTopology;
use crate::nn::{Activation, Mlp, NnError};
use crate::params::{BoundParams, ModelParams, ParamError};
use crate::tensor::{dim_err, Tensor, TensorError};

/// Objects whose pooled mass falls below this get it added to the divisor.
pub const MASS_EPS: f64 = 1e-8;
pub const TAU_FLOOR: f64 = 0.05;
/// Added to coarse conductances and damping so softplus underflow on large
/// pooled features cannot produce a singular object graph.
pub const COARSE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MultigridError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Cg(#[from] CgError),
    #[error("invalid object configuration: {0}")]
    Config(String),
}

impl From<NnError> for MultigridError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Param(p) => Self::Param(p),
            NnError::Tensor(t) => Self::Tensor(t),
        }
    }
}

/// Node-to-graph membership for batched inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    pub index: Arc<[usize]>,
    pub counts: Vec<usize>,
}

impl Segments {
    pub fn single(n: usize) -> Self {
        Self {
            index: vec![0; n].into(),
            counts: vec![n],
        }
    }

    /// `copies` contiguous blocks of `size` nodes each.
    pub fn blocks(size: usize, copies: usize) -> Self {
        Self {
            index: (0..size * copies).map(|i| i / size.max(1)).collect(),
            counts: vec![size; copies],
        }
    }

    pub fn from_index(index: Vec<usize>) -> Self {
        let n_seg = index.iter().copied().max().map_or(0, |m| m + 1);
        let mut counts = vec![0; n_seg];
        for &s in &index {
            counts[s] += 1;
        }
        Self {
            index: index.into(),
            counts,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.index.len()
    }

    pub fn n_segments(&self) -> usize {
        self.counts.len()
    }
}

fn check_pool_shapes(
    op: &'static str,
    rho: &Tensor,
    n: usize,
    seg: &Segments,
) -> Result<usize, TensorError> {
    let (rn, k) = rho.dims2()?;
    if rn != n || seg.n_nodes() != n {
        return Err(dim_err(
            op,
            format!(
                "rho has {rn} rows, features {n}, segments {}",
                seg.n_nodes()
            ),
        ));
    }
    Ok(k)
}

/// `O[s·K+k, :] = Σ_{i∈s} ρ[i,k] f[i,:]` (unnormalized pooling).
pub fn segment_pool(rho: &Tensor, f: &Tensor, seg: &Segments) -> Result<Tensor, TensorError> {
    let (n, c) = f.dims2()?;
    let k = check_pool_shapes("segment_pool", rho, n, seg)?;
    let mut out = Tensor::zeros(&[seg.n_segments() * k, c]);
    let data = out.data_mut();
    for i in 0..n {
        let s = seg.index[i];
        let fi = f.row(i);
        for (kk, &r) in rho.row(i).iter().enumerate() {
            let dst = &mut data[(s * k + kk) * c..(s * k + kk + 1) * c];
            for (d, &x) in dst.iter_mut().zip(fi) {
                *d += r * x;
            }
        }
    }
    Ok(out)
}

/// `u[i,:] = Σ_k ρ[i,k] o[s_i·K+k, :]`.
pub fn segment_prolong(rho: &Tensor, o: &Tensor, seg: &Segments) -> Result<Tensor, TensorError> {
    let n = seg.n_nodes();
    let k = check_pool_shapes("segment_prolong", rho, n, seg)?;
    let (on, c) = o.dims2()?;
    if on != seg.n_segments() * k {
        return Err(dim_err(
            "segment_prolong",
            format!("{on} object rows for {} segments × {k}", seg.n_segments()),
        ));
    }
    let mut out = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let s = seg.index[i];
        let dst = &mut out.data_mut()[i * c..(i + 1) * c];
        for (kk, &r) in rho.row(i).iter().enumerate() {
            for (d, &x) in dst.iter_mut().zip(o.row(s * k + kk)) {
                *d += r * x;
            }
        }
    }
    Ok(out)
}

/// Differentiable [`segment_pool`].
pub fn pool_var<'t>(rho: Var<'t>, f: Var<'t>, seg: &Segments) -> Result<Var<'t>, TensorError> {
    let (rv, fv) = (rho.value(), f.value());
    let value = segment_pool(&rv, &fv, seg)?;
    let seg = seg.clone();
    Ok(rho
        .tape()
        .custom("segment_pool", &[rho, f], value, move |g| {
            let (n, c) = fv.dims2()?;
            let k = rv.cols();
            let mut grho = Tensor::zeros(&[n, k]);
            let mut gf = Tensor::zeros(&[n, c]);
            for i in 0..n {
                let s = seg.index[i];
                for kk in 0..k {
                    let gr = g.row(s * k + kk);
                    let dot: f64 = gr.iter().zip(fv.row(i)).map(|(a, b)| a * b).sum();
                    grho.set(i, kk, dot);
                    let r = rv.get(i, kk);
                    for (d, &x) in gf.data_mut()[i * c..(i + 1) * c].iter_mut().zip(gr) {
                        *d += r * x;
                    }
                }
            }
            Ok(vec![grho, gf])
        }))
}

/// Differentiable [`segment_prolong`].
pub fn prolong_var<'t>(rho: Var<'t>, o: Var<'t>, seg: &Segments) -> Result<Var<'t>, TensorError> {
    let (rv, ov) = (rho.value(), o.value());
    let value = segment_prolong(&rv, &ov, seg)?;
    let seg = seg.clone();
    Ok(rho
        .tape()
        .custom("segment_prolong", &[rho, o], value, move |g| {
            let (n, c) = g.dims2()?;
            let k = rv.cols();
            let mut grho = Tensor::zeros(&[n, k]);
            let mut go = Tensor::zeros(ov.shape());
            for i in 0..n {
                let s = seg.index[i];
                let gi = g.row(i);
                for kk in 0..k {
                    let row = s * k + kk;
                    let dot: f64 = gi.iter().zip(ov.row(row)).map(|(a, b)| a * b).sum();
                    grho.set(i, kk, dot);
                    let r = rv.get(i, kk);
                    for (d, &x) in go.data_mut()[row * c..(row + 1) * c].iter_mut().zip(gi) {
                        *d += r * x;
                    }
                }
            }
            Ok(vec![grho, go])
        }))
}

/// Restriction with optional mass normalization. Returns pooled features and
/// the indices of objects whose mass was below [`MASS_EPS`].
pub fn restrict(
    rho: &Tensor,
    f: &Tensor,
    seg: &Segments,
    normalize: bool,
) -> Result<(Tensor, Vec<usize>), TensorError> {
    let mut o = segment_pool(rho, f, seg)?;
    let mut light = Vec::new();
    if normalize {
        let mass = segment_pool(rho, &Tensor::full(&[f.rows(), 1], 1.0), seg)?;
        let c = o.cols();
        for (row, &m) in mass.data().iter().enumerate() {
            let d = if m < MASS_EPS {
                light.push(row);
                m + MASS_EPS
            } else {
                m
            };
            for x in &mut o.data_mut()[row * c..(row + 1) * c] {
                *x /= d;
            }
        }
    }
    Ok((o, light))
}

pub fn prolongate(rho: &Tensor, o: &Tensor, seg: &Segments) -> Result<Tensor, TensorError> {
    segment_prolong(rho, o, seg)
}

/// Differentiable restriction; zero-mass objects get [`MASS_EPS`] added to
/// their divisor.
pub fn restrict_var<'t>(
    rho: Var<'t>,
    f: Var<'t>,
    seg: &Segments,
    normalize: bool,
) -> Result<(Var<'t>, Vec<usize>), TensorError> {
    let pooled = pool_var(rho, f, seg)?;
    if !normalize {
        return Ok((pooled, Vec::new()));
    }
    let tape = rho.tape();
    let ones = tape.constant(Tensor::full(&[f.value().rows(), 1], 1.0));
    let mass = pool_var(rho, ones, seg)?;
    let mut light = Vec::new();
    let offset: Vec<f64> = mass
        .value()
        .data()
        .iter()
        .enumerate()
        .map(|(row, &m)| {
            if m < MASS_EPS {
                light.push(row);
                MASS_EPS
            } else {
                0.0
            }
        })
        .collect();
    let denom = mass.add(tape.constant(Tensor::column(offset)))?;
    Ok((pooled.div(denom)?, light))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssignmentDiagnostics {
    /// Objects whose largest membership over nodes exceeds 0.5.
    pub active: usize,
    /// Mean row entropy in nats.
    pub mean_entropy: f64,
    /// Per-node argmax, ties toward the lower index.
    pub cluster_map: Vec<usize>,
}

pub fn assignment_diagnostics(rho: &Tensor) -> Result<AssignmentDiagnostics, TensorError> {
    let (n, k) = rho.dims2()?;
    let mut col_max = vec![0.0f64; k];
    let mut entropy = 0.0;
    let mut cluster_map = Vec::with_capacity(n);
    for i in 0..n {
        let row = rho.row(i);
        let mut best = 0;
        for (kk, &p) in row.iter().enumerate() {
            col_max[kk] = col_max[kk].max(p);
            if p > 0.0 {
                entropy -= p * p.ln();
            }
            if p > row[best] {
                best = kk;
            }
        }
        cluster_map.push(best);
    }
    Ok(AssignmentDiagnostics {
        active: col_max.iter().filter(|&&m| m > 0.5).count(),
        mean_entropy: if n == 0 { 0.0 } else { entropy / n as f64 },
        cluster_map,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub objects: usize,
    pub hidden: usize,
    #[serde(default = "default_true")]
    pub mass_normalize: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ObjectConfig {
    fn default() -> Self {
        Self {
            objects: 16,
            hidden: 32,
            mass_normalize: true,
        }
    }
}

/// Learned object layer.
#[derive(Clone, Debug)]
pub struct ObjectLayer {
    cfg: ObjectConfig,
    fields: usize,
    assign: Mlp,
    pair: Mlp,
    damp: Mlp,
    source: Mlp,
    prefix: String,
}

/// Everything the object layer produced during one pass.
pub struct ObjectOutput<'t> {
    /// Unpooled coarse solution, `N × K`.
    pub u: Var<'t>,
    pub rho: Var<'t>,
    pub tau: f64,
    pub coarse_records: Vec<SolveRecord>,
    pub light_objects: Vec<usize>,
}

impl ObjectLayer {
    /// `fields` is K (width of ψ̃ and of the coarse solve); `feature_width` is
    /// the width of the pooled cell features.
    pub fn register(
        params: &mut ModelParams,
        prefix: &str,
        cfg: &ObjectConfig,
        fields: usize,
        feature_width: usize,
        activation: Activation,
    ) -> Result<Self, MultigridError> {
        if cfg.objects == 0 {
            return Err(MultigridError::Config("objects must be ≥ 1".into()));
        }
        let h = cfg.hidden;
        let assign = Mlp::register(
            params,
            &format!("{prefix}.assign"),
            &[fields + 2, h, cfg.objects],
            activation,
            false,
        )?;
        let pair = Mlp::register(
            params,
            &format!("{prefix}.pair"),
            &[2 * feature_width, h, 1],
            activation,
            false,
        )?;
        let damp = Mlp::register(
            params,
            &format!("{prefix}.damp"),
            &[feature_width, h, fields],
            activation,
            false,
        )?;
        let source = Mlp::register(
            params,
            &format!("{prefix}.source"),
            &[feature_width, h, fields],
            activation,
            false,
        )?;
        params.insert(&format!("{prefix}.tau_raw"), Tensor::scalar(0.0))?;
        Ok(Self {
            cfg: cfg.clone(),
            fields,
            assign,
            pair,
            damp,
            source,
            prefix: prefix.to_string(),
        })
    }

    pub fn config(&self) -> &ObjectConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.assign.param_count()
            + self.pair.param_count()
            + self.damp.param_count()
            + self.source.param_count()
            + 1
    }

    /// Soft assignment `softmax(MLP(ψ̃ ‖ p) / τ)`.
    pub fn assignment<'t>(
        &self,
        bound: &BoundParams<'t>,
        psi_tilde: Var<'t>,
        positions: Var<'t>,
    ) -> Result<(Var<'t>, f64), MultigridError> {
        let logits = self
            .assign
            .forward(bound, concat_cols(&[psi_tilde, positions])?)?;
        let tau = bound
            .get(&format!("{}.tau_raw", self.prefix))?
            .softplus()
            .add_scalar(TAU_FLOOR);
        let tau_value = tau.value().data()[0];
        Ok((logits.div(tau)?.softmax()?, tau_value))
    }

    /// Full V-cycle: assign, restrict `features`, coarse solve, prolongate.
    pub fn vcycle<'t>(
        &self,
        bound: &BoundParams<'t>,
        psi_tilde: Var<'t>,
        positions: Var<'t>,
        features: Var<'t>,
        seg: &Segments,
        cg: &CgConfig,
    ) -> Result<ObjectOutput<'t>, MultigridError> {
        let (rho, tau) = self.assignment(bound, psi_tilde, positions)?;
        let (o, light_objects) = restrict_var(rho, features, seg, self.cfg.mass_normalize)?;
        let k_obj = self.cfg.objects;
        let block = GraphTopology::complete(k_obj);
        let blocks: Vec<&GraphTopology> = vec![&block; seg.n_segments()];
        let coarse = Arc::new(GraphTopology::disjoint_union(&blocks));
        let (src, dst) = (coarse.sources(), coarse.targets());
        let oa = o.gather_rows(src)?;
        let ob = o.gather_rows(dst)?;
        let pair_feat = concat_cols(&[oa.add(ob)?, oa.mul(ob)?])?;
        let w = self
            .pair
            .forward(bound, pair_feat)?
            .softplus()
            .add_scalar(COARSE_FLOOR);
        let lambda = self
            .damp
            .forward(bound, o)?
            .softplus()
            .add_scalar(COARSE_FLOOR);
        let b = self.source.forward(bound, o)?;
        let (psi_obj, coarse_records) = poisson_solve(&coarse, w, lambda, b, cg)?;
        debug_assert_eq!(psi_obj.value().cols(), self.fields);
        let u = prolong_var(rho, psi_obj, seg)?;
        Ok(ObjectOutput {
            u,
            rho,
            tau,
            coarse_records,
            light_objects,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_two_clusters() -> Tensor {
        Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn restrict_one_hot_means() {
        let rho = one_hot_two_clusters();
        let f = Tensor::column(vec![1.0, 2.0, 3.0, 4.0]);
        let seg = Segments::single(4);
        let (o, light) = restrict(&rho, &f, &seg, true).unwrap();
        assert_eq!(o.data(), &[1.5, 3.5]);
        assert!(light.is_empty());
        let u = prolongate(&rho, &o, &seg).unwrap();
        assert_eq!(u.data(), &[1.5, 1.5, 3.5, 3.5]);
    }

    #[test]
    fn uniform_assignment_averages() {
        let rho = Tensor::full(&[3, 2], 0.5);
        let f = Tensor::from_rows(&vec![vec![2.0, -1.0]; 3]).unwrap();
        let seg = Segments::single(3);
        let (o, _) = restrict(&rho, &f, &seg, true).unwrap();
        for r in 0..2 {
            assert!((o.get(r, 0) - 2.0).abs() < 1e-15 && (o.get(r, 1) + 1.0).abs() < 1e-15);
        }
        let u = prolongate(&rho, &o, &seg).unwrap();
        assert!((u.get(1, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_object_is_flagged() {
        let rho = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let f = Tensor::column(vec![1.0, 3.0]);
        let (o, light) = restrict(&rho, &f, &Segments::single(2), true).unwrap();
        assert_eq!(light, vec![1]);
        assert!(o.is_finite());
        assert_eq!(o.data()[1], 0.0);
    }

    #[test]
    fn segments_keep_graphs_apart() {
        let rho = one_hot_two_clusters();
        let f = Tensor::column(vec![1.0, 2.0, 3.0, 4.0]);
        let seg = Segments::blocks(2, 2);
        let (o, _) = restrict(&rho, &f, &seg, true).unwrap();
        // Segment 0 only populates object 0, segment 1 only object 1.
        assert_eq!(o.get(0, 0), 1.5);
        assert_eq!(o.get(3, 0), 3.5);
    }

    #[test]
    fn entropy_diagnostics() {
        let d = assignment_diagnostics(&one_hot_two_clusters()).unwrap();
        assert_eq!(d.mean_entropy, 0.0);
        assert_eq!(d.active, 2);
        assert_eq!(d.cluster_map, vec![0, 0, 1, 1]);
        let d = assignment_diagnostics(&Tensor::full(&[5, 16], 1.0 / 16.0)).unwrap();
        assert!((d.mean_entropy - 16f64.ln()).abs() < 1e-12);
        assert_eq!(d.active, 0);
    }
}
