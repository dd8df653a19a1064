//! Graph topology, the weighted Laplacian and the screened operator
//! `A = L_W + diag(λ)`.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("resource error: {0}")]
    Resource(String),
    #[error("parse error on line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// Row-major grid metadata: `copies` stacked `height × width` grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub copies: usize,
}

impl GridShape {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

/// Immutable undirected graph; every edge is stored once with `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphTopology {
    n_nodes: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    positions: Option<Vec<[f64; 2]>>,
    grid: Option<GridShape>,
}

impl GraphTopology {
    /// Validates and normalizes `(i, j)` pairs to `i < j`.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut seen = HashSet::with_capacity(edges.len());
        let mut src = Vec::with_capacity(edges.len());
        let mut dst = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(GraphError::Invalid(format!("self-loop at node {a}")));
            }
            if a >= n_nodes || b >= n_nodes {
                return Err(GraphError::Invalid(format!(
                    "edge ({a}, {b}) out of range for {n_nodes} nodes"
                )));
            }
            let (i, j) = (a.min(b), a.max(b));
            if !seen.insert((i, j)) {
                return Err(GraphError::Invalid(format!("duplicate edge ({i}, {j})")));
            }
            src.push(i);
            dst.push(j);
        }
        Ok(Self {
            n_nodes,
            src: src.into(),
            dst: dst.into(),
            positions: None,
            grid: None,
        })
    }

    pub fn with_positions(mut self, positions: Vec<[f64; 2]>) -> Result<Self, GraphError> {
        if positions.len() != self.n_nodes {
            return Err(GraphError::Dimension(format!(
                "{} positions for {} nodes",
                positions.len(),
                self.n_nodes
            )));
        }
        self.positions = Some(positions);
        Ok(self)
    }

    /// Complete graph on `n` nodes.
    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self::new(n, &edges).expect("complete graph is valid")
    }

    /// Disjoint union; node indices of later parts are offset.
    pub fn disjoint_union(parts: &[&GraphTopology]) -> Self {
        let mut edges = Vec::new();
        let mut positions = Vec::new();
        let mut offset = 0;
        for p in parts {
            edges.extend(p.edges().map(|(i, j)| (i + offset, j + offset)));
            if let Some(pos) = &p.positions {
                positions.extend_from_slice(pos);
            }
            offset += p.n_nodes;
        }
        let mut out = Self::new(offset, &edges).expect("union of valid graphs is valid");
        if positions.len() == offset {
            out.positions = Some(positions);
        }
        let grids: Vec<_> = parts.iter().map(|p| p.grid).collect();
        if let Some(Some(g)) = grids.first() {
            if grids
                .iter()
                .all(|x| matches!(x, Some(o) if o.height == g.height && o.width == g.width))
            {
                out.grid = Some(GridShape {
                    copies: grids.iter().map(|x| x.unwrap().copies).sum(),
                    ..*g
                });
            }
        }
        out
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src.iter().copied().zip(self.dst.iter().copied())
    }

    /// Lower endpoint of every edge.
    pub fn sources(&self) -> Arc<[usize]> {
        Arc::clone(&self.src)
    }

    /// Upper endpoint of every edge.
    pub fn targets(&self) -> Arc<[usize]> {
        Arc::clone(&self.dst)
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    pub fn grid(&self) -> Option<GridShape> {
        self.grid
    }

    pub fn degree(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_nodes];
        for (i, j) in self.edges() {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }
}

/// Row-major `height × width` lattice. Connectivity 4 links cardinal
/// neighbours, 8 adds diagonals. Positions are `(row, col)` scaled to `[0, 1]`.
pub fn grid_topology(
    height: usize,
    width: usize,
    connectivity: u8,
) -> Result<GraphTopology, GraphError> {
    if height == 0 || width == 0 {
        return Err(GraphError::Argument(format!(
            "grid extents must be positive, got {height}x{width}"
        )));
    }
    if connectivity != 4 && connectivity != 8 {
        return Err(GraphError::Argument(format!(
            "connectivity must be 4 or 8, got {connectivity}"
        )));
    }
    let idx = |r: usize, c: usize| r * width + c;
    let mut edges = Vec::new();
    for r in 0..height {
        for c in 0..width {
            if c + 1 < width {
                edges.push((idx(r, c), idx(r, c + 1)));
            }
            if r + 1 < height {
                edges.push((idx(r, c), idx(r + 1, c)));
            }
            if connectivity == 8 && r + 1 < height {
                if c + 1 < width {
                    edges.push((idx(r, c), idx(r + 1, c + 1)));
                }
                if c > 0 {
                    edges.push((idx(r, c), idx(r + 1, c - 1)));
                }
            }
        }
    }
    let scale = |v: usize, extent: usize| {
        if extent > 1 {
            v as f64 / (extent - 1) as f64
        } else {
            0.0
        }
    };
    let positions = (0..height * width)
        .map(|k| [scale(k / width, height), scale(k % width, width)])
        .collect();
    let mut topo = GraphTopology::new(height * width, &edges)?.with_positions(positions)?;
    topo.grid = Some(GridShape {
        height,
        width,
        copies: 1,
    });
    Ok(topo)
}

/// Conductances plus one damping vector: the operator of a single field.
#[derive(Clone, Debug)]
pub struct ScreenedSystem {
    topology: Arc<GraphTopology>,
    w: Arc<[f64]>,
    lambda: Vec<f64>,
}

impl ScreenedSystem {
    pub fn new(
        topology: Arc<GraphTopology>,
        w: Arc<[f64]>,
        lambda: Vec<f64>,
    ) -> Result<Self, GraphError> {
        if w.len() != topology.n_edges() {
            return Err(GraphError::Dimension(format!(
                "{} conductances for {} edges",
                w.len(),
                topology.n_edges()
            )));
        }
        if lambda.len() != topology.n_nodes() {
            return Err(GraphError::Dimension(format!(
                "{} damping values for {} nodes",
                lambda.len(),
                topology.n_nodes()
            )));
        }
        if let Some((e, v)) = w
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(GraphError::Invalid(format!(
                "conductance of edge {e} must be positive and finite, got {v}"
            )));
        }
        if let Some((i, v)) = lambda
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(GraphError::Invalid(format!(
                "damping of node {i} must be positive and finite, got {v}"
            )));
        }
        Ok(Self {
            topology,
            w,
            lambda,
        })
    }

    pub fn topology(&self) -> &Arc<GraphTopology> {
        &self.topology
    }

    pub fn conductances(&self) -> &Arc<[f64]> {
        &self.w
    }

    pub fn damping(&self) -> &[f64] {
        &self.lambda
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.n_nodes()
    }

    /// Diagonal of `A`: weighted degree plus damping.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = self.lambda.clone();
        for ((i, j), &w) in self.topology.edges().zip(self.w.iter()) {
            d[i] += w;
            d[j] += w;
        }
        d
    }

    /// `out = (L_W + diag λ)·psi`, matrix-free.
    pub fn apply_into(&self, psi: &[f64], out: &mut [f64]) -> Result<(), GraphError> {
        let n = self.n_nodes();
        if psi.len() != n || out.len() != n {
            return Err(GraphError::Dimension(format!(
                "vector lengths {} / {} for {n} nodes",
                psi.len(),
                out.len()
            )));
        }
        for ((o, &l), &p) in out.iter_mut().zip(&self.lambda).zip(psi) {
            *o = l * p;
        }
        for ((&i, &j), &w) in self
            .topology
            .src
            .iter()
            .zip(self.topology.dst.iter())
            .zip(self.w.iter())
        {
            let flux = w * (psi[i] - psi[j]);
            out[i] += flux;
            out[j] -= flux;
        }
        Ok(())
    }
}

pub fn laplacian_apply(sys: &ScreenedSystem, psi: &[f64]) -> Result<Vec<f64>, GraphError> {
    let mut out = vec![0.0; sys.n_nodes()];
    sys.apply_into(psi, &mut out)?;
    Ok(out)
}

pub const DEFAULT_DENSE_CAP: usize = 2000;

/// Dense `A`; refuses graphs larger than `cap` nodes.
pub fn assemble_dense(sys: &ScreenedSystem, cap: usize) -> Result<DMatrix<f64>, GraphError> {
    let n = sys.n_nodes();
    if n > cap {
        return Err(GraphError::Resource(format!(
            "{n} nodes exceeds the dense assembly cap of {cap}"
        )));
    }
    let mut a = DMatrix::zeros(n, n);
    for (i, &l) in sys.lambda.iter().enumerate() {
        a[(i, i)] = l;
    }
    for ((i, j), &w) in sys.topology.edges().zip(sys.w.iter()) {
        a[(i, i)] += w;
        a[(j, j)] += w;
        a[(i, j)] -= w;
        a[(j, i)] -= w;
    }
    Ok(a)
}

/// `½Σ_edges w(ψ_i−ψ_j)² + ½Σ λ_i ψ_i² − Σ b_i ψ_i`.
pub fn dirichlet_energy(sys: &ScreenedSystem, psi: &[f64], b: &[f64]) -> Result<f64, GraphError> {
    let n = sys.n_nodes();
    if psi.len() != n || b.len() != n {
        return Err(GraphError::Dimension(format!(
            "vector lengths {} / {} for {n} nodes",
            psi.len(),
            b.len()
        )));
    }
    let edge: f64 = sys
        .topology
        .edges()
        .zip(sys.w.iter())
        .map(|((i, j), &w)| w * (psi[i] - psi[j]).powi(2))
        .sum();
    let damp: f64 = sys.lambda.iter().zip(psi).map(|(l, p)| l * p * p).sum();
    let src: f64 = b.iter().zip(psi).map(|(b, p)| b * p).sum();
    Ok(0.5 * edge + 0.5 * damp - src)
}

/// Parses `n m` followed by `m` lines of `i j w`.
pub fn parse_graph_text(text: &str) -> Result<(GraphTopology, Vec<f64>), GraphError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or(GraphError::Parse {
        line: 1,
        detail: "missing header".into(),
    })?;
    let nums: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str, line: usize| {
        s.parse::<usize>().map_err(|e| GraphError::Parse {
            line,
            detail: format!("{s:?}: {e}"),
        })
    };
    if nums.len() != 2 {
        return Err(GraphError::Parse {
            line: hl,
            detail: "header must be `n m`".into(),
        });
    }
    let n = parse_usize(nums[0], hl)?;
    let m = parse_usize(nums[1], hl)?;
    let mut edges = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(m);
    for _ in 0..m {
        let (ln, line) = lines.next().ok_or(GraphError::Parse {
            line: hl + edges.len() + 1,
            detail: format!("expected {m} edge lines"),
        })?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(GraphError::Parse {
                line: ln,
                detail: "edge line must be `i j w`".into(),
            });
        }
        edges.push((parse_usize(f[0], ln)?, parse_usize(f[1], ln)?));
        w.push(f[2].parse::<f64>().map_err(|e| GraphError::Parse {
            line: ln,
            detail: format!("{:?}: {e}", f[2]),
        })?);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(GraphError::Parse {
            line: ln,
            detail: "trailing content".into(),
        });
    }
    Ok((GraphTopology::new(n, &edges)?, w))
}

pub fn write_graph_text(topology: &GraphTopology, w: &[f64]) -> String {
    let mut s = format!("{} {}\n", topology.n_nodes(), topology.n_edges());
    for ((i, j), w) in topology.edges().zip(w) {
        s.push_str(&format!("{i} {j} {w}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> ScreenedSystem {
        let t = Arc::new(GraphTopology::new(2, &[(0, 1)]).unwrap());
        ScreenedSystem::new(t, vec![1.0].into(), vec![2.0, 2.0]).unwrap()
    }

    #[test]
    fn two_node_apply_and_dense() {
        let sys = two_node();
        assert_eq!(laplacian_apply(&sys, &[1.0, 0.0]).unwrap(), vec![3.0, -1.0]);
        assert_eq!(laplacian_apply(&sys, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let a = assemble_dense(&sys, DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 3.0]));
    }

    #[test]
    fn isolated_node_is_diagonal_only() {
        let t = Arc::new(GraphTopology::new(3, &[(0, 1)]).unwrap());
        let sys = ScreenedSystem::new(t, vec![1.0].into(), vec![1.0, 1.0, 5.0]).unwrap();
        assert_eq!(laplacian_apply(&sys, &[0.0, 0.0, 2.0]).unwrap()[2], 10.0);
    }

    #[test]
    fn empty_edge_set_is_diag_lambda() {
        let t = Arc::new(GraphTopology::new(3, &[]).unwrap());
        let sys = ScreenedSystem::new(t, Vec::new().into(), vec![1.0, 2.0, 3.0]).unwrap();
        let a = assemble_dense(&sys, 10).unwrap();
        assert_eq!(
            a,
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]))
        );
        assert!(matches!(
            assemble_dense(&sys, 2),
            Err(GraphError::Resource(_))
        ));
    }

    #[test]
    fn dirichlet_energy_at_solution() {
        let sys = two_node();
        assert_eq!(
            dirichlet_energy(&sys, &[0.0, 0.0], &[4.0, -1.0]).unwrap(),
            0.0
        );
        let e = dirichlet_energy(&sys, &[3.0 / 8.0, 1.0 / 8.0], &[1.0, 0.0]).unwrap();
        assert!((e + 3.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn grid_edge_counts() {
        assert_eq!(grid_topology(2, 2, 4).unwrap().n_edges(), 4);
        assert_eq!(grid_topology(1, 1, 4).unwrap().n_edges(), 0);
        assert_eq!(grid_topology(3, 3, 8).unwrap().n_edges(), 20);
        assert!(matches!(
            grid_topology(3, 3, 6),
            Err(GraphError::Argument(_))
        ));
        let g = grid_topology(3, 2, 4).unwrap();
        assert_eq!(g.positions().unwrap()[5], [1.0, 1.0]);
    }

    #[test]
    fn topology_validation() {
        assert!(GraphTopology::new(2, &[(0, 0)]).is_err());
        assert!(GraphTopology::new(2, &[(0, 1), (1, 0)]).is_err());
        assert!(GraphTopology::new(2, &[(0, 2)]).is_err());
        let t = Arc::new(GraphTopology::new(2, &[(0, 1)]).unwrap());
        assert!(ScreenedSystem::new(t.clone(), vec![0.0].into(), vec![1.0, 1.0]).is_err());
        assert!(ScreenedSystem::new(t, vec![1.0].into(), vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn graph_text_round_trip() {
        let text = "3 2\n0 1 0.5\n1 2 2\n";
        let (t, w) = parse_graph_text(text).unwrap();
        assert_eq!(t.n_nodes(), 3);
        assert_eq!(w, vec![0.5, 2.0]);
        assert_eq!(write_graph_text(&t, &w), text);
        assert!(parse_graph_text("3 2\n0 1 0.5\n").is_err());
    }

    #[test]
    fn disjoint_union_keeps_grid_metadata() {
        let g = grid_topology(3, 3, 4).unwrap();
        let u = GraphTopology::disjoint_union(&[&g, &g]);
        assert_eq!(u.n_nodes(), 18);
        assert_eq!(u.n_edges(), 24);
        assert_eq!(u.grid().unwrap().copies, 2);
    }
}
