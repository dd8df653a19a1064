//! Causal screened-Poisson recurrence on sequences.
//!
//! The causal system `w_i(ψ_i − ψ_{i−1}) + λ_i ψ_i = b_i` is the affine
//! recurrence `ψ_i = α_i ψ_{i−1} + β_i` with `α = w/(w+λ)`, `β = b/(w+λ)`.
//! It is solved either left to right or by a work-efficient parallel scan
//! over affine maps `x ↦ a·x + b`.

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::Var;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("position {index}: {detail}")]
    Domain { index: usize, detail: String },
    #[error("length mismatch: {0}")]
    Dimension(String),
    #[error("empty chain")]
    Empty,
    #[error("chunk size must be at least 1")]
    Chunk,
}

/// The affine map `x ↦ a·x + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineElem {
    pub a: f64,
    pub b: f64,
}

impl AffineElem {
    pub const IDENTITY: AffineElem = AffineElem { a: 1.0, b: 0.0 };

    pub fn apply(self, x: f64) -> f64 {
        self.a * x + self.b
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn after(self, inner: AffineElem) -> AffineElem {
        AffineElem {
            a: self.a * inner.a,
            b: self.a * inner.b + self.b,
        }
    }
}

/// Scan operator: `first` then `second`.
#[inline]
fn then(first: AffineElem, second: AffineElem) -> AffineElem {
    second.after(first)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineChain {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl AffineChain {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn elems(&self) -> impl Iterator<Item = AffineElem> + '_ {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(&a, &b)| AffineElem { a, b })
    }
}

/// `α_i = w_i/(w_i+λ_i)`, `β_i = b_i/(w_i+λ_i)`.
pub fn coefficients(w: &[f64], lambda: &[f64], b: &[f64]) -> Result<AffineChain, ScanError> {
    if w.len() != lambda.len() || w.len() != b.len() {
        return Err(ScanError::Dimension(format!(
            "w {}, lambda {}, b {}",
            w.len(),
            lambda.len(),
            b.len()
        )));
    }
    let mut alpha = Vec::with_capacity(w.len());
    let mut beta = Vec::with_capacity(w.len());
    for (i, ((&wi, &li), &bi)) in w.iter().zip(lambda).zip(b).enumerate() {
        if !(wi > 0.0) || !(li > 0.0) || !wi.is_finite() || !li.is_finite() {
            return Err(ScanError::Domain {
                index: i,
                detail: format!("w = {wi}, lambda = {li} must be positive and finite"),
            });
        }
        let d = wi + li;
        alpha.push(wi / d);
        beta.push(bi / d);
    }
    Ok(AffineChain { alpha, beta })
}

pub fn scan_sequential(chain: &AffineChain, psi0: f64) -> Result<Vec<f64>, ScanError> {
    if chain.is_empty() {
        return Err(ScanError::Empty);
    }
    let mut prev = psi0;
    Ok(chain
        .elems()
        .map(|e| {
            prev = e.apply(prev);
            prev
        })
        .collect())
}

/// Levels with fewer independent blocks than this run on the calling thread.
const PAR_BLOCKS: usize = 2048;

/// In-place exclusive scan (up-sweep, then down-sweep) on a power-of-two
/// length buffer.
fn blelloch_exclusive(x: &mut [AffineElem]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut stride = 2;
    while stride <= n {
        let half = stride / 2;
        let up = |c: &mut [AffineElem]| c[stride - 1] = then(c[half - 1], c[stride - 1]);
        if n / stride >= PAR_BLOCKS {
            x.par_chunks_mut(stride).for_each(up);
        } else {
            x.chunks_mut(stride).for_each(up);
        }
        stride *= 2;
    }
    x[n - 1] = AffineElem::IDENTITY;
    let mut stride = n;
    while stride >= 2 {
        let half = stride / 2;
        let down = |c: &mut [AffineElem]| {
            let left = c[half - 1];
            c[half - 1] = c[stride - 1];
            c[stride - 1] = then(c[stride - 1], left);
        };
        if n / stride >= PAR_BLOCKS {
            x.par_chunks_mut(stride).for_each(down);
        } else {
            x.chunks_mut(stride).for_each(down);
        }
        stride /= 2;
    }
}

/// Same result as [`scan_sequential`] via a tree-structured scan.
pub fn scan_parallel(chain: &AffineChain, psi0: f64) -> Result<Vec<f64>, ScanError> {
    if chain.is_empty() {
        return Err(ScanError::Empty);
    }
    let n = chain.len();
    let padded = n.next_power_of_two();
    let elems: Vec<AffineElem> = chain.elems().collect();
    let mut buf = elems.clone();
    buf.resize(padded, AffineElem::IDENTITY);
    blelloch_exclusive(&mut buf);
    let out = buf[..n]
        .par_iter()
        .zip(elems.par_iter())
        .with_min_len(4096)
        .map(|(prefix, e)| then(*prefix, *e).apply(psi0))
        .collect();
    Ok(out)
}

/// Gradients of a scalar loss with respect to the recurrence inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGrad {
    pub grad_w: Vec<f64>,
    pub grad_lambda: Vec<f64>,
    pub grad_b: Vec<f64>,
    pub grad_psi0: f64,
}

/// Reverse adjoint `v_i = upstream_i + α_{i+1} v_{i+1}`, then the chain rule
/// through the coefficient formulas.
pub fn scan_grad(
    w: &[f64],
    lambda: &[f64],
    b: &[f64],
    psi: &[f64],
    psi0: f64,
    upstream: &[f64],
) -> Result<ScanGrad, ScanError> {
    let chain = coefficients(w, lambda, b)?;
    let n = chain.len();
    if psi.len() != n || upstream.len() != n {
        return Err(ScanError::Dimension(format!(
            "chain {n}, psi {}, upstream {}",
            psi.len(),
            upstream.len()
        )));
    }
    let mut v = vec![0.0; n];
    let mut next = 0.0;
    for i in (0..n).rev() {
        let carry = if i + 1 < n {
            chain.alpha[i + 1] * next
        } else {
            0.0
        };
        v[i] = upstream[i] + carry;
        next = v[i];
    }
    let mut grad_w = vec![0.0; n];
    let mut grad_lambda = vec![0.0; n];
    let mut grad_b = vec![0.0; n];
    for i in 0..n {
        let prev = if i == 0 { psi0 } else { psi[i - 1] };
        let d = w[i] + lambda[i];
        let d2 = d * d;
        let g_alpha = v[i] * prev;
        let g_beta = v[i];
        grad_w[i] = g_alpha * lambda[i] / d2 - g_beta * b[i] / d2;
        grad_lambda[i] = -g_alpha * w[i] / d2 - g_beta * b[i] / d2;
        grad_b[i] = g_beta / d;
    }
    let grad_psi0 = if n > 0 { chain.alpha[0] * v[0] } else { 0.0 };
    Ok(ScanGrad {
        grad_w,
        grad_lambda,
        grad_b,
        grad_psi0,
    })
}

/// Differentiable causal solve over the rows of `N × C` inputs, each column an
/// independent sequence, with `ψ_0 = 0`.
pub fn causal_scan<'t>(w: Var<'t>, lambda: Var<'t>, b: Var<'t>) -> Result<Var<'t>, TensorError> {
    let (wv, lv, bv) = (w.value(), lambda.value(), b.value());
    let (n, c) = wv.dims2()?;
    if lv.shape() != wv.shape() || bv.shape() != wv.shape() {
        return Err(crate::tensor::dim_err(
            "causal_scan",
            format!("{:?} {:?} {:?}", wv.shape(), lv.shape(), bv.shape()),
        ));
    }
    let num = |e: ScanError| TensorError::Numeric {
        op: "causal_scan",
        detail: e.to_string(),
    };
    let cols = |t: &Tensor| (0..c).map(|j| t.col(j)).collect::<Vec<_>>();
    let (wc, lc, bc) = (cols(&wv), cols(&lv), cols(&bv));
    let mut out = Tensor::zeros(&[n, c]);
    let mut psis = Vec::with_capacity(c);
    for j in 0..c {
        let chain = coefficients(&wc[j], &lc[j], &bc[j]).map_err(num)?;
        let psi = if n == 0 {
            Vec::new()
        } else {
            scan_parallel(&chain, 0.0).map_err(num)?
        };
        for (i, &p) in psi.iter().enumerate() {
            out.set(i, j, p);
        }
        psis.push(psi);
    }
    Ok(w.tape()
        .custom("causal_scan", &[w, lambda, b], out, move |g| {
            let mut gw = Tensor::zeros(&[n, c]);
            let mut gl = Tensor::zeros(&[n, c]);
            let mut gb = Tensor::zeros(&[n, c]);
            for j in 0..c {
                let sg =
                    scan_grad(&wc[j], &lc[j], &bc[j], &psis[j], 0.0, &g.col(j)).map_err(num)?;
                for i in 0..n {
                    gw.set(i, j, sg.grad_w[i]);
                    gl.set(i, j, sg.grad_lambda[i]);
                    gb.set(i, j, sg.grad_b[i]);
                }
            }
            Ok(vec![gw, gl, gb])
        }))
}

/// Row `i` of the result is the mean of rows in the last complete chunk that
/// ends strictly before `i`'s own chunk; rows in the first chunk are zero.
pub fn causal_pool(x: &Tensor, chunk: usize) -> Result<Tensor, ScanError> {
    if chunk == 0 {
        return Err(ScanError::Chunk);
    }
    let (n, c) = x.dims2().map_err(|e| ScanError::Dimension(e.to_string()))?;
    let mut out = Tensor::zeros(&[n, c]);
    let mut mean = vec![0.0; c];
    for q in 1..n.div_ceil(chunk) {
        mean.iter_mut().for_each(|m| *m = 0.0);
        for r in (q - 1) * chunk..q * chunk {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= chunk as f64);
        for r in q * chunk..((q + 1) * chunk).min(n) {
            out.data_mut()[r * c..(r + 1) * c].copy_from_slice(&mean);
        }
    }
    Ok(out)
}

/// Multi-scale causal pooling: level `l` pools with chunk `Π_{m≤l} chunks[m]`.
pub fn causal_pool_levels(x: &Tensor, chunks: &[usize]) -> Result<Vec<Tensor>, ScanError> {
    let mut size = 1usize;
    chunks
        .iter()
        .map(|&c| {
            if c == 0 {
                return Err(ScanError::Chunk);
            }
            size = size.saturating_mul(c);
            causal_pool(x, size)
        })
        .collect()
}

/// Per-position outer product `ψ ⊗ ψ` across fields, `N × K` to `N × K²`.
pub fn field_outer(psi: &Tensor) -> Result<Tensor, TensorError> {
    let (n, k) = psi.dims2()?;
    let mut out = Tensor::zeros(&[n, k * k]);
    for i in 0..n {
        let row = psi.row(i);
        for a in 0..k {
            for b in 0..k {
                out.set(i, a * k + b, row[a] * row[b]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_examples() {
        let c = coefficients(&[1.0], &[1.0], &[2.0]).unwrap();
        assert_eq!((c.alpha[0], c.beta[0]), (0.5, 1.0));
        let c = coefficients(&[1.0], &[1e6], &[1.0]).unwrap();
        assert!(c.alpha[0] < 1e-5 && c.beta[0] < 1e-5);
        let c = coefficients(&[3e7], &[3e7], &[0.0]).unwrap();
        assert_eq!(c.alpha[0], 0.5);
        assert!(matches!(
            coefficients(&[0.0], &[1.0], &[1.0]),
            Err(ScanError::Domain { index: 0, .. })
        ));
    }

    #[test]
    fn sequential_examples() {
        let chain = AffineChain {
            alpha: vec![0.5, 0.5],
            beta: vec![1.0, 1.0],
        };
        assert_eq!(scan_sequential(&chain, 0.0).unwrap(), vec![1.0, 1.5]);
        assert_eq!(scan_parallel(&chain, 0.0).unwrap(), vec![1.0, 1.5]);
        let step = AffineChain {
            alpha: vec![1.0; 4],
            beta: vec![0.0, 2.0, 0.0, 0.0],
        };
        assert_eq!(
            scan_sequential(&step, 0.0).unwrap(),
            vec![0.0, 2.0, 2.0, 2.0]
        );
        assert_eq!(
            scan_sequential(
                &AffineChain {
                    alpha: vec![],
                    beta: vec![]
                },
                0.0
            ),
            Err(ScanError::Empty)
        );
    }

    #[test]
    fn single_element_parallel() {
        let chain = AffineChain {
            alpha: vec![0.25],
            beta: vec![3.0],
        };
        assert_eq!(scan_parallel(&chain, 4.0).unwrap(), vec![4.0]);
    }

    #[test]
    fn memoryless_grad_b() {
        // α ≡ 0 is the λ → ∞ limit; emulate with huge λ relative to w.
        let w = vec![1e-300; 3];
        let l = vec![2.0, 4.0, 8.0];
        let b = vec![1.0; 3];
        let chain = coefficients(&w, &l, &b).unwrap();
        let psi = scan_sequential(&chain, 0.0).unwrap();
        let up = vec![1.0, -2.0, 3.0];
        let g = scan_grad(&w, &l, &b, &psi, 0.0, &up).unwrap();
        for i in 0..3 {
            assert!((g.grad_b[i] - up[i] / (w[i] + l[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::column(vec![1.0, 2.0, 3.0]);
        assert_eq!(causal_pool(&x, 1).unwrap().data(), &[0.0, 1.0, 2.0]);
        let x = Tensor::column(vec![3.0; 10]);
        let p = causal_pool(&x, 4).unwrap();
        assert_eq!(
            p.data(),
            &[0.0, 0.0, 0.0, 0.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0]
        );
        assert_eq!(causal_pool(&x, 0), Err(ScanError::Chunk));
    }
}
