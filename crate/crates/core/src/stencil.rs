//! Depthwise 3×3 stencils on row-major grids with replicate padding.
//!
//! Fields are `P × K` tensors (pixels × fields); kernels are `K × 9` with tap
//! `t = (dr+1)·3 + (dc+1)` weighting the pixel at offset `(dr, dc)`.

use crate::autodiff::Var;
use crate::tensor::{dim_err, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid2 {
    pub height: usize,
    pub width: usize,
}

impl Grid2 {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.width + c
    }

    /// Pixel reached from `(r, c)` by `(dr, dc)`, clamped to the grid.
    #[inline]
    pub fn clamped(&self, r: usize, c: usize, dr: isize, dc: isize) -> usize {
        let rr = (r as isize + dr).clamp(0, self.height as isize - 1) as usize;
        let cc = (c as isize + dc).clamp(0, self.width as isize - 1) as usize;
        rr * self.width + cc
    }

    /// Coordinates in `[−1, 1]²` with the origin at the grid centre:
    /// `x` follows columns, `y` follows rows.
    pub fn centered_coords(&self, r: usize, c: usize) -> (f64, f64) {
        let span = |i: usize, n: usize| {
            if n <= 1 {
                0.0
            } else {
                2.0 * i as f64 / (n - 1) as f64 - 1.0
            }
        };
        (span(c, self.width), span(r, self.height))
    }
}

pub const TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Positive-semidefinite 5-point Laplacian `4ψ − Σ neighbours`.
pub const LAPLACIAN5: [f64; 9] = [0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0];

/// Column derivative, exact on linear ramps.
pub const SOBEL_X: [f64; 9] = [-0.125, 0.0, 0.125, -0.25, 0.0, 0.25, -0.125, 0.0, 0.125];

/// Row derivative (rows increase downward).
pub const SOBEL_Y: [f64; 9] = [-0.125, -0.25, -0.125, 0.0, 0.0, 0.0, 0.125, 0.25, 0.125];

/// `ψ[r, c+1] − ψ[r, c]`.
pub const FORWARD_X: [f64; 9] = [0.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0];

/// `ψ[r+1, c] − ψ[r, c]`.
pub const FORWARD_Y: [f64; 9] = [0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0];

/// `K × 9` kernel tensor repeating `taps` for every field.
pub fn repeat_kernel(taps: &[f64; 9], k: usize) -> Tensor {
    Tensor::new(vec![k, 9], taps.repeat(k)).expect("9·k values")
}

fn check(x: &Tensor, kernels: &Tensor, grid: Grid2) -> Result<(usize, usize), TensorError> {
    let (p, k) = x.dims2()?;
    if p != grid.pixels() || kernels.shape() != [k, 9] {
        return Err(dim_err(
            "conv3x3",
            format!(
                "field {:?}, kernels {:?}, grid {}×{}",
                x.shape(),
                kernels.shape(),
                grid.height,
                grid.width
            ),
        ));
    }
    Ok((p, k))
}

pub fn conv3x3(x: &Tensor, kernels: &Tensor, grid: Grid2) -> Result<Tensor, TensorError> {
    let (p, k) = check(x, kernels, grid)?;
    let mut out = Tensor::zeros(&[p, k]);
    let xs = x.data();
    let ks = kernels.data();
    let o = out.data_mut();
    for r in 0..grid.height {
        for c in 0..grid.width {
            let i = grid.index(r, c);
            for (t, &(dr, dc)) in TAPS.iter().enumerate() {
                let j = grid.clamped(r, c, dr, dc);
                for f in 0..k {
                    o[i * k + f] += ks[f * 9 + t] * xs[j * k + f];
                }
            }
        }
    }
    Ok(out)
}

/// Adjoints of [`conv3x3`] with respect to the field and the kernels.
pub fn conv3x3_backward(
    x: &Tensor,
    kernels: &Tensor,
    grid: Grid2,
    g: &Tensor,
) -> Result<(Tensor, Tensor), TensorError> {
    let (p, k) = check(x, kernels, grid)?;
    let mut gx = Tensor::zeros(&[p, k]);
    let mut gk = Tensor::zeros(&[k, 9]);
    let (xs, ks, gs) = (x.data(), kernels.data(), g.data());
    for r in 0..grid.height {
        for c in 0..grid.width {
            let i = grid.index(r, c);
            for (t, &(dr, dc)) in TAPS.iter().enumerate() {
                let j = grid.clamped(r, c, dr, dc);
                for f in 0..k {
                    let up = gs[i * k + f];
                    gx.data_mut()[j * k + f] += ks[f * 9 + t] * up;
                    gk.data_mut()[f * 9 + t] += xs[j * k + f] * up;
                }
            }
        }
    }
    Ok((gx, gk))
}

/// Differentiable [`conv3x3`].
pub fn conv3x3_var<'t>(x: Var<'t>, kernels: Var<'t>, grid: Grid2) -> Result<Var<'t>, TensorError> {
    let (xv, kv) = (x.value(), kernels.value());
    let value = conv3x3(&xv, &kv, grid)?;
    Ok(x.tape().custom("conv3x3", &[x, kernels], value, move |g| {
        let (gx, gk) = conv3x3_backward(&xv, &kv, grid, g)?;
        Ok(vec![gx, gk])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(grid: Grid2, a: f64, b: f64) -> Tensor {
        let mut t = Tensor::zeros(&[grid.pixels(), 1]);
        for r in 0..grid.height {
            for c in 0..grid.width {
                t.set(grid.index(r, c), 0, a * c as f64 + b * r as f64);
            }
        }
        t
    }

    #[test]
    fn sobel_is_exact_on_ramps() {
        let g = Grid2::new(5, 6);
        let f = ramp(g, 2.0, -3.0);
        let gx = conv3x3(&f, &repeat_kernel(&SOBEL_X, 1), g).unwrap();
        let gy = conv3x3(&f, &repeat_kernel(&SOBEL_Y, 1), g).unwrap();
        for r in 1..4 {
            for c in 1..5 {
                assert!((gx.get(g.index(r, c), 0) - 2.0).abs() < 1e-14);
                assert!((gy.get(g.index(r, c), 0) + 3.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn laplacian_of_constant_is_zero_with_replicate_padding() {
        let g = Grid2::new(4, 3);
        let f = Tensor::full(&[12, 2], 3.5);
        let l = conv3x3(&f, &repeat_kernel(&LAPLACIAN5, 2), g).unwrap();
        assert!(l.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn centered_coords_span() {
        let g = Grid2::new(3, 5);
        assert_eq!(g.centered_coords(1, 2), (0.0, 0.0));
        assert_eq!(g.centered_coords(0, 0), (-1.0, -1.0));
        assert_eq!(g.centered_coords(2, 4), (1.0, 1.0));
    }
}
