//! Tree mazes: generation, anonymous type encoding, text I/O, and the
//! per-cell label scheme.
//!
//! Cells carry an integer type index in `0..4`. The mapping from the four
//! cell roles to indices is owned by a [`TypeMap`]; models only ever see the
//! indices.

mod model;

pub use model::*;

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_TYPES: usize = 4;
pub const N_CLASSES: usize = 5;

/// Per-cell classes predicted by the model.
pub const CLASS_OFF_PATH: u8 = 0;
pub const CLASS_PATH: u8 = 1;
pub const CLASS_SOURCE: u8 = 2;
pub const CLASS_GOAL: u8 = 3;
pub const CLASS_WALL: u8 = 4;

#[derive(Debug, Error)]
pub enum MazeError {
    #[error("maze sides must be odd and at least 5, got {0}×{1}")]
    Size(usize, usize),
    #[error("parse error on line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("invalid maze: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Wall,
    Corridor,
    Source,
    Goal,
}

const ROLES: [Role; 4] = [Role::Wall, Role::Corridor, Role::Source, Role::Goal];

/// Private role → index assignment (a permutation of `0..4`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeMap([u8; 4]);

impl Default for TypeMap {
    fn default() -> Self {
        Self([0, 1, 2, 3])
    }
}

impl TypeMap {
    pub fn new(indices: [u8; 4]) -> Result<Self, MazeError> {
        let mut seen = [false; 4];
        for &i in &indices {
            if i as usize >= N_TYPES || seen[i as usize] {
                return Err(MazeError::Invalid(format!(
                    "{indices:?} is not a permutation of 0..4"
                )));
            }
            seen[i as usize] = true;
        }
        Ok(Self(indices))
    }

    fn slot(role: Role) -> usize {
        ROLES.iter().position(|&r| r == role).unwrap()
    }

    pub fn index(&self, role: Role) -> u8 {
        self.0[Self::slot(role)]
    }

    pub fn role(&self, index: u8) -> Option<Role> {
        self.0.iter().position(|&i| i == index).map(|s| ROLES[s])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Maze {
    pub height: usize,
    pub width: usize,
    /// Row-major type indices.
    pub grid: Vec<u8>,
    /// Row-major classes in `0..5`.
    pub labels: Vec<u8>,
}

fn check_size(h: usize, w: usize) -> Result<(), MazeError> {
    if h < 5 || w < 5 || h % 2 == 0 || w % 2 == 0 {
        return Err(MazeError::Size(h, w));
    }
    Ok(())
}

fn neighbours(h: usize, w: usize, i: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / w, i % w);
    let mut out = [usize::MAX; 4];
    if r > 0 {
        out[0] = i - w;
    }
    if r + 1 < h {
        out[1] = i + w;
    }
    if c > 0 {
        out[2] = i - 1;
    }
    if c + 1 < w {
        out[3] = i + 1;
    }
    out.into_iter().filter(|&j| j != usize::MAX)
}

/// BFS over open cells from `from`; returns the parent array.
fn bfs_parents(h: usize, w: usize, open: &[bool], from: usize) -> Vec<Option<usize>> {
    let mut parent = vec![None; h * w];
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(i) = queue.pop_front() {
        for j in neighbours(h, w, i) {
            if open[j] && !seen[j] {
                seen[j] = true;
                parent[j] = Some(i);
                queue.push_back(j);
            }
        }
    }
    parent
}

fn label_cells(
    h: usize,
    w: usize,
    open: &[bool],
    source: usize,
    goal: usize,
) -> Result<Vec<u8>, MazeError> {
    let mut labels: Vec<u8> = open
        .iter()
        .map(|&o| if o { CLASS_OFF_PATH } else { CLASS_WALL })
        .collect();
    let parent = bfs_parents(h, w, open, source);
    let mut cur = goal;
    while cur != source {
        labels[cur] = CLASS_PATH;
        cur =
            parent[cur].ok_or_else(|| MazeError::Invalid("goal unreachable from source".into()))?;
    }
    labels[source] = CLASS_SOURCE;
    labels[goal] = CLASS_GOAL;
    Ok(labels)
}

/// Randomized depth-first spanning tree with the default type map.
pub fn generate_maze(height: usize, width: usize, seed: u64) -> Result<Maze, MazeError> {
    generate_maze_with(height, width, seed, TypeMap::default())
}

pub fn generate_maze_with(
    height: usize,
    width: usize,
    seed: u64,
    map: TypeMap,
) -> Result<Maze, MazeError> {
    check_size(height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height, width);
    let mut open = vec![false; h * w];
    let start = w + 1;
    open[start] = true;
    let mut stack = vec![start];
    while let Some(&i) = stack.last() {
        let (r, c) = (i / w, i % w);
        let mut options = Vec::with_capacity(4);
        if r >= 3 && !open[i - 2 * w] {
            options.push((i - 2 * w, i - w));
        }
        if r + 3 < h && !open[i + 2 * w] {
            options.push((i + 2 * w, i + w));
        }
        if c >= 3 && !open[i - 2] {
            options.push((i - 2, i - 1));
        }
        if c + 3 < w && !open[i + 2] {
            options.push((i + 2, i + 1));
        }
        match options.choose(&mut rng) {
            Some(&(next, between)) => {
                open[between] = true;
                open[next] = true;
                stack.push(next);
            }
            None => {
                stack.pop();
            }
        }
    }
    let corridors: Vec<usize> = (0..h * w).filter(|&i| open[i]).collect();
    let source = corridors[rng.gen_range(0..corridors.len())];
    let goal = loop {
        let g = corridors[rng.gen_range(0..corridors.len())];
        if g != source {
            break g;
        }
    };
    let labels = label_cells(h, w, &open, source, goal)?;
    let grid = (0..h * w)
        .map(|i| {
            let role = if i == source {
                Role::Source
            } else if i == goal {
                Role::Goal
            } else if open[i] {
                Role::Corridor
            } else {
                Role::Wall
            };
            map.index(role)
        })
        .collect();
    Ok(Maze {
        height,
        width,
        grid,
        labels,
    })
}

/// `count` mazes with per-maze seeds derived from `seed`.
pub fn generate_corpus(
    height: usize,
    width: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Maze>, MazeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| generate_maze(height, width, rng.gen()))
        .collect()
}

impl Maze {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// `"H W"` header then `H` rows of `W` type digits.
    pub fn to_text(&self) -> String {
        digit_grid(self.height, self.width, &self.grid)
    }

    pub fn labels_text(&self) -> String {
        digit_grid(self.height, self.width, &self.labels)
    }

    /// Parses a maze grid and recomputes its labels using `map`.
    pub fn from_text(text: &str, map: TypeMap) -> Result<Self, MazeError> {
        let (height, width, grid) = parse_digit_grid(text)?;
        check_size(height, width)?;
        let mut source = None;
        let mut goal = None;
        let mut open = vec![false; grid.len()];
        for (i, &t) in grid.iter().enumerate() {
            let role = map
                .role(t)
                .ok_or_else(|| MazeError::Invalid(format!("type index {t} out of range")))?;
            open[i] = role != Role::Wall;
            let slot = match role {
                Role::Source => &mut source,
                Role::Goal => &mut goal,
                _ => continue,
            };
            if slot.replace(i).is_some() {
                return Err(MazeError::Invalid(format!("more than one {role:?} cell")));
            }
        }
        let source = source.ok_or_else(|| MazeError::Invalid("no source cell".into()))?;
        let goal = goal.ok_or_else(|| MazeError::Invalid("no goal cell".into()))?;
        let labels = label_cells(height, width, &open, source, goal)?;
        Ok(Self {
            height,
            width,
            grid,
            labels,
        })
    }

    /// Number of distinct simple corridor paths from source to goal, capped
    /// at `cap`. Tree mazes have exactly one.
    pub fn count_paths(&self, map: TypeMap, cap: usize) -> usize {
        let open: Vec<bool> = self
            .grid
            .iter()
            .map(|&t| map.role(t) != Some(Role::Wall))
            .collect();
        let find = |role| self.grid.iter().position(|&t| map.role(t) == Some(role));
        let (Some(s), Some(g)) = (find(Role::Source), find(Role::Goal)) else {
            return 0;
        };
        let mut visited = vec![false; self.cells()];
        let mut count = 0;
        fn dfs(
            m: &Maze,
            open: &[bool],
            i: usize,
            g: usize,
            visited: &mut [bool],
            count: &mut usize,
            cap: usize,
        ) {
            if *count >= cap {
                return;
            }
            if i == g {
                *count += 1;
                return;
            }
            visited[i] = true;
            for j in neighbours(m.height, m.width, i) {
                if open[j] && !visited[j] {
                    dfs(m, open, j, g, visited, count, cap);
                }
            }
            visited[i] = false;
        }
        dfs(self, &open, s, g, &mut visited, &mut count, cap);
        count
    }
}

pub fn digit_grid(height: usize, width: usize, cells: &[u8]) -> String {
    let mut s = format!("{height} {width}\n");
    for r in 0..height {
        for &d in &cells[r * width..(r + 1) * width] {
            s.push(char::from(b'0' + d));
        }
        s.push('\n');
    }
    s
}

pub fn parse_digit_grid(text: &str) -> Result<(usize, usize, Vec<u8>), MazeError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(MazeError::Parse {
        line: 1,
        detail: "missing header".into(),
    })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| MazeError::Parse {
            line: 1,
            detail: format!("bad header: {e}"),
        })?;
    let [h, w] = dims[..] else {
        return Err(MazeError::Parse {
            line: 1,
            detail: "header must be \"H W\"".into(),
        });
    };
    let mut cells = Vec::with_capacity(h * w);
    let mut rows = 0;
    for (ln, line) in lines {
        let line = line.trim();
        if line.len() != w {
            return Err(MazeError::Parse {
                line: ln + 1,
                detail: format!("expected {w} digits, got {}", line.len()),
            });
        }
        for ch in line.chars() {
            let d = ch.to_digit(10).ok_or_else(|| MazeError::Parse {
                line: ln + 1,
                detail: format!("not a digit: {ch:?}"),
            })?;
            cells.push(d as u8);
        }
        rows += 1;
    }
    if rows != h {
        return Err(MazeError::Parse {
            line: rows + 1,
            detail: format!("expected {h} rows, got {rows}"),
        });
    }
    Ok((h, w, cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_replays() {
        let a = generate_maze(5, 5, 42).unwrap();
        assert_eq!(a, generate_maze(5, 5, 42).unwrap());
        assert_eq!(a.labels.iter().filter(|&&l| l == CLASS_SOURCE).count(), 1);
        assert_eq!(a.labels.iter().filter(|&&l| l == CLASS_GOAL).count(), 1);
    }

    #[test]
    fn rejects_even_or_small_sizes() {
        assert!(generate_maze(4, 5, 0).is_err());
        assert!(generate_maze(3, 3, 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = generate_maze(9, 7, 3).unwrap();
        let back = Maze::from_text(&m.to_text(), TypeMap::default()).unwrap();
        assert_eq!(back, m);
        assert!(Maze::from_text("5 5\n0000\n", TypeMap::default()).is_err());
    }

    #[test]
    fn type_map_must_be_permutation() {
        assert!(TypeMap::new([0, 0, 1, 2]).is_err());
        let m = TypeMap::new([3, 1, 0, 2]).unwrap();
        assert_eq!(m.role(0), Some(Role::Source));
        assert_eq!(m.index(Role::Wall), 3);
    }
}
