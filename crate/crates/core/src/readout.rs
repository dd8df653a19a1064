//! Readouts of evolved fields built from conserved-current densities.
//!
//! All inputs are `P × K` per-pixel field tensors on a [`Grid2`]. Pair
//! features use the lexicographic order of `(a, b)` with `a < b`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stencil::{conv3x3, repeat_kernel, Grid2, SOBEL_X, SOBEL_Y};
use crate::tensor::{dim_err, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadoutError {
    #[error("unknown readout kind {0:?} (expected stress-energy, noether or curvature)")]
    UnknownKind(String),
    #[error("K must be ≥ 1")]
    NoFields,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    StressEnergy,
    Noether,
    Curvature,
}

impl FromStr for ReadoutKind {
    type Err = ReadoutError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stress-energy" => Ok(Self::StressEnergy),
            "noether" => Ok(Self::Noether),
            "curvature" => Ok(Self::Curvature),
            other => Err(ReadoutError::UnknownKind(other.to_string())),
        }
    }
}

impl fmt::Display for ReadoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::StressEnergy => "stress-energy",
            Self::Noether => "noether",
            Self::Curvature => "curvature",
        })
    }
}

pub fn pair_count(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Per-pixel feature count of each readout.
pub fn feature_count(kind: ReadoutKind, k: usize) -> Result<usize, ReadoutError> {
    if k == 0 {
        return Err(ReadoutError::NoFields);
    }
    Ok(match kind {
        ReadoutKind::StressEnergy => k * k,
        ReadoutKind::Curvature => k + pair_count(k),
        ReadoutKind::Noether => 5 * k + 3 * pair_count(k),
    })
}

/// [`feature_count`] from a kind name.
pub fn feature_count_named(kind: &str, k: usize) -> Result<usize, ReadoutError> {
    feature_count(kind.parse()?, k)
}

/// Column names of each readout, in output order.
pub fn feature_names(kind: ReadoutKind, k: usize) -> Result<Vec<String>, ReadoutError> {
    feature_count(kind, k)?;
    let mut names = Vec::new();
    match kind {
        ReadoutKind::StressEnergy => {
            names.extend((0..k).map(|a| format!("E_{a}_{a}")));
            names.extend(pairs(k).map(|(a, b)| format!("E_{a}_{b}")));
            names.extend(pairs(k).map(|(a, b)| format!("V_{a}_{b}")));
        }
        ReadoutKind::Noether => {
            for a in 0..k {
                for part in ["px", "py", "L", "D", "E"] {
                    names.push(format!("{part}_{a}"));
                }
            }
            for (a, b) in pairs(k) {
                for part in ["E", "V", "C"] {
                    names.push(format!("{part}_{a}_{b}"));
                }
            }
        }
        ReadoutKind::Curvature => {
            names.extend((0..k).map(|a| format!("K_{a}_{a}")));
            names.extend(pairs(k).map(|(a, b)| format!("K_{a}_{b}")));
        }
    }
    Ok(names)
}

pub fn pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |a| (a + 1..k).map(move |b| (a, b)))
}

/// Directional derivatives from learned depthwise kernels (`K × 9` each).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub gx: Tensor,
    pub gy: Tensor,
}

impl GradientField {
    pub fn compute(
        psi: &Tensor,
        kx: &Tensor,
        ky: &Tensor,
        grid: Grid2,
    ) -> Result<Self, TensorError> {
        Ok(Self {
            gx: conv3x3(psi, kx, grid)?,
            gy: conv3x3(psi, ky, grid)?,
        })
    }

    /// With the Sobel-like initial kernels.
    pub fn sobel(psi: &Tensor, grid: Grid2) -> Result<Self, TensorError> {
        let k = psi.cols();
        Self::compute(
            psi,
            &repeat_kernel(&SOBEL_X, k),
            &repeat_kernel(&SOBEL_Y, k),
            grid,
        )
    }

    fn check(&self) -> Result<(usize, usize), TensorError> {
        if self.gx.shape() != self.gy.shape() {
            return Err(dim_err(
                "readout",
                format!("gx {:?} vs gy {:?}", self.gx.shape(), self.gy.shape()),
            ));
        }
        self.gx.dims2()
    }
}

/// Energy density and vorticity blocks, `P × K`, `P × K(K−1)/2`,
/// `P × K(K−1)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutFeatures {
    pub e_diag: Tensor,
    pub e_cross: Tensor,
    pub vorticity: Tensor,
}

impl ReadoutFeatures {
    /// `[E_diag | E_cross | V]`, `P × K²`.
    pub fn to_tensor(&self) -> Result<Tensor, TensorError> {
        hcat(&[&self.e_diag, &self.e_cross, &self.vorticity])
    }
}

fn hcat(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
    let p = parts[0].rows();
    let width: usize = parts.iter().map(|t| t.cols()).sum();
    let mut data = Vec::with_capacity(p * width);
    for i in 0..p {
        for t in parts {
            if t.rows() != p {
                return Err(dim_err("hcat", "row counts differ"));
            }
            if t.cols() > 0 {
                data.extend_from_slice(t.row(i));
            }
        }
    }
    Tensor::matrix(p, width, data)
}

/// `E_ab = gx_a gx_b + gy_a gy_b`, `V_ab = gx_a gy_b − gx_b gy_a`.
pub fn stress_energy(g: &GradientField) -> Result<ReadoutFeatures, TensorError> {
    let (p, k) = g.check()?;
    let m = pair_count(k);
    let mut e_diag = Tensor::zeros(&[p, k]);
    let mut e_cross = Tensor::zeros(&[p, m]);
    let mut vorticity = Tensor::zeros(&[p, m]);
    for i in 0..p {
        let (x, y) = (g.gx.row(i), g.gy.row(i));
        for a in 0..k {
            e_diag.set(i, a, x[a] * x[a] + y[a] * y[a]);
        }
        for (q, (a, b)) in pairs(k).enumerate() {
            e_cross.set(i, q, x[a] * x[b] + y[a] * y[b]);
            vorticity.set(i, q, x[a] * y[b] - x[b] * y[a]);
        }
    }
    Ok(ReadoutFeatures {
        e_diag,
        e_cross,
        vorticity,
    })
}

/// Full `E_ab` and `V_ab` as `P × K²` (row-major in `(a, b)`), both halves.
pub fn stress_energy_full(g: &GradientField) -> Result<(Tensor, Tensor), TensorError> {
    let (p, k) = g.check()?;
    let mut e = Tensor::zeros(&[p, k * k]);
    let mut v = Tensor::zeros(&[p, k * k]);
    for i in 0..p {
        let (x, y) = (g.gx.row(i), g.gy.row(i));
        for a in 0..k {
            for b in 0..k {
                e.set(i, a * k + b, x[a] * x[b] + y[a] * y[b]);
                v.set(i, a * k + b, x[a] * y[b] - x[b] * y[a]);
            }
        }
    }
    Ok((e, v))
}

/// Mixed component `T^{xy}_{ab} = gx_a gy_b`, `P × K²`.
pub fn mixed_stress(g: &GradientField) -> Result<Tensor, TensorError> {
    let (p, k) = g.check()?;
    let mut t = Tensor::zeros(&[p, k * k]);
    for i in 0..p {
        let (x, y) = (g.gx.row(i), g.gy.row(i));
        for a in 0..k {
            for b in 0..k {
                t.set(i, a * k + b, x[a] * y[b]);
            }
        }
    }
    Ok(t)
}

/// Symmetric and antisymmetric halves of `T^{xy}` over the field pair.
pub fn split_mixed(t: &Tensor, k: usize) -> Result<(Tensor, Tensor), TensorError> {
    let (p, kk) = t.dims2()?;
    if kk != k * k {
        return Err(dim_err("split_mixed", format!("{kk} columns for K = {k}")));
    }
    let mut sym = Tensor::zeros(&[p, kk]);
    let mut anti = Tensor::zeros(&[p, kk]);
    for i in 0..p {
        for a in 0..k {
            for b in 0..k {
                let (ab, ba) = (t.get(i, a * k + b), t.get(i, b * k + a));
                sym.set(i, a * k + b, 0.5 * (ab + ba));
                anti.set(i, a * k + b, 0.5 * (ab - ba));
            }
        }
    }
    Ok((sym, anti))
}

/// Per field `[p_x, p_y, L, D, E_aa]`, then per pair `[E_ab, V_ab, C_ab]`
/// where `C_ab = ½[x(ψ_a gx_b + ψ_b gx_a) + y(ψ_a gy_b + ψ_b gy_a)]` is the
/// symmetrized cross dilation current. Coordinates span `[−1, 1]²` with the
/// origin at the grid centre.
pub fn noether_currents(
    psi: &Tensor,
    g: &GradientField,
    grid: Grid2,
) -> Result<Tensor, TensorError> {
    let (p, k) = g.check()?;
    if psi.shape() != g.gx.shape() || p != grid.pixels() {
        return Err(dim_err(
            "noether_currents",
            format!("ψ {:?}, gradients {:?}", psi.shape(), g.gx.shape()),
        ));
    }
    let m = pair_count(k);
    let width = 5 * k + 3 * m;
    let mut out = Tensor::zeros(&[p, width]);
    for r in 0..grid.height {
        for c in 0..grid.width {
            let i = grid.index(r, c);
            let (x, y) = grid.centered_coords(r, c);
            let (ps, gx, gy) = (psi.row(i), g.gx.row(i), g.gy.row(i));
            let row = &mut out.data_mut()[i * width..(i + 1) * width];
            for a in 0..k {
                let px = ps[a] * gx[a];
                let py = ps[a] * gy[a];
                let base = 5 * a;
                row[base] = px;
                row[base + 1] = py;
                row[base + 2] = x * py - y * px;
                row[base + 3] = x * px + y * py;
                row[base + 4] = gx[a] * gx[a] + gy[a] * gy[a];
            }
            for (q, (a, b)) in pairs(k).enumerate() {
                let base = 5 * k + 3 * q;
                row[base] = gx[a] * gx[b] + gy[a] * gy[b];
                row[base + 1] = gx[a] * gy[b] - gx[b] * gy[a];
                row[base + 2] = 0.5
                    * (x * (ps[a] * gx[b] + ps[b] * gx[a]) + y * (ps[a] * gy[b] + ps[b] * gy[a]));
            }
        }
    }
    Ok(out)
}

/// `[ψ_a Δψ_a for each a | ψ_a Δψ_b − ψ_b Δψ_a for a < b]`, where `lap`
/// holds `Δψ` for every field.
pub fn field_curvature(psi: &Tensor, lap: &Tensor) -> Result<Tensor, TensorError> {
    if psi.shape() != lap.shape() {
        return Err(dim_err(
            "field_curvature",
            format!("ψ {:?} vs Δψ {:?}", psi.shape(), lap.shape()),
        ));
    }
    let (p, k) = psi.dims2()?;
    let width = k + pair_count(k);
    let mut out = Tensor::zeros(&[p, width]);
    for i in 0..p {
        let (ps, ls) = (psi.row(i), lap.row(i));
        for a in 0..k {
            out.set(i, a, ps[a] * ls[a]);
        }
        for (q, (a, b)) in pairs(k).enumerate() {
            out.set(i, k + q, curvature_antisymmetric(ps, ls, a, b));
        }
    }
    Ok(out)
}

/// Symmetric product `ψ_a Δψ_b` at one pixel.
pub fn curvature_symmetric(psi: &[f64], lap: &[f64], a: usize, b: usize) -> f64 {
    psi[a] * lap[b]
}

/// Cross-field twist `ψ_a Δψ_b − ψ_b Δψ_a` at one pixel.
pub fn curvature_antisymmetric(psi: &[f64], lap: &[f64], a: usize, b: usize) -> f64 {
    psi[a] * lap[b] - psi[b] * lap[a]
}

/// Single dispatch over the three readouts. `lap` is required for the
/// curvature readout only.
pub fn readout(
    kind: ReadoutKind,
    psi: &Tensor,
    g: &GradientField,
    lap: Option<&Tensor>,
    grid: Grid2,
) -> Result<Tensor, TensorError> {
    match kind {
        ReadoutKind::StressEnergy => stress_energy(g)?.to_tensor(),
        ReadoutKind::Noether => noether_currents(psi, g, grid),
        ReadoutKind::Curvature => {
            let lap = lap.ok_or_else(|| dim_err("readout", "curvature needs Δψ"))?;
            field_curvature(psi, lap)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(feature_count(ReadoutKind::StressEnergy, 32).unwrap(), 1024);
        assert_eq!(feature_count(ReadoutKind::Curvature, 1).unwrap(), 1);
        assert_eq!(feature_count(ReadoutKind::Noether, 2).unwrap(), 13);
        for kind in [
            ReadoutKind::StressEnergy,
            ReadoutKind::Noether,
            ReadoutKind::Curvature,
        ] {
            assert_eq!(
                feature_names(kind, 4).unwrap().len(),
                feature_count(kind, 4).unwrap()
            );
        }
        assert!(matches!(
            feature_count_named("spectral", 3),
            Err(ReadoutError::UnknownKind(_))
        ));
    }

    #[test]
    fn orthogonal_ramps() {
        let g = GradientField {
            gx: Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            gy: Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap(),
        };
        let f = stress_energy(&g).unwrap();
        assert_eq!(f.e_cross.data(), &[0.0]);
        assert_eq!(f.vorticity.data(), &[1.0]);
        assert_eq!(f.e_diag.data(), &[1.0, 1.0]);
        assert_eq!(f.to_tensor().unwrap().cols(), 4);
    }

    #[test]
    fn centre_pixel_has_no_angular_or_dilation_current() {
        let grid = Grid2::new(3, 3);
        let psi = Tensor::new(vec![9, 1], (0..9).map(|i| (i as f64).sin()).collect()).unwrap();
        let g = GradientField::sobel(&psi, grid).unwrap();
        let n = noether_currents(&psi, &g, grid).unwrap();
        assert_eq!(n.get(4, 2), 0.0);
        assert_eq!(n.get(4, 3), 0.0);
    }

    #[test]
    fn curvature_examples() {
        let psi = Tensor::from_rows(&[vec![1.0, 0.3]]).unwrap();
        let lap = Tensor::from_rows(&[vec![0.0, 2.5]]).unwrap();
        assert_eq!(curvature_symmetric(psi.row(0), lap.row(0), 0, 1), 2.5);
        assert_eq!(curvature_antisymmetric(psi.row(0), lap.row(0), 1, 1), 0.0);
        let f = field_curvature(&psi, &lap).unwrap();
        assert_eq!(f.cols(), 3);
        assert_eq!(f.get(0, 2), 2.5);
    }
}
