//! Discrete grid MDP, exact value-iteration oracle, and tabular learners
//! driven by the same window targets as the network critic.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{chaining_target, naive_max_target};
use crate::error::{Error, Result};
use crate::maze::{Cell, MazeLayout};
use crate::rng::{self, Rng};

pub const ACTIONS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Deterministic four-action grid; moving into a wall or off the grid stays put.
#[derive(Clone, Debug)]
pub struct GridMdp {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Cell>,
    index: Vec<Option<usize>>,
    next: Vec<[usize; 4]>,
}

impl GridMdp {
    /// `#` marks a wall, anything else a free cell.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let rows = lines.len();
        let cols = lines.first().map_or(0, |l| l.chars().count());
        if rows == 0 || cols == 0 || lines.iter().any(|l| l.chars().count() != cols) {
            return Err(Error::Layout("grid must be a non-empty rectangle".into()));
        }
        let walls: Vec<bool> = lines.iter().flat_map(|l| l.chars().map(|c| c == '#')).collect();
        Self::from_walls(rows, cols, &walls)
    }

    pub fn open(rows: usize, cols: usize) -> Result<Self> {
        Self::from_walls(rows, cols, &vec![false; rows * cols])
    }

    /// Free cells of a continuous maze layout as a grid MDP.
    pub fn from_layout(layout: &MazeLayout) -> Result<Self> {
        let walls: Vec<bool> = (0..layout.rows * layout.cols)
            .map(|i| layout.is_wall((i / layout.cols) as i64, (i % layout.cols) as i64))
            .collect();
        Self::from_walls(layout.rows, layout.cols, &walls)
    }

    fn from_walls(rows: usize, cols: usize, walls: &[bool]) -> Result<Self> {
        let mut index = vec![None; rows * cols];
        let mut cells = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if !walls[r * cols + c] {
                    index[r * cols + c] = Some(cells.len());
                    cells.push(Cell { row: r, col: c });
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Layout("grid has no free cells".into()));
        }
        let next = cells
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                let mut out = [i; 4];
                for (a, (dr, dc)) in ACTIONS.iter().enumerate() {
                    let (r, c) = (cell.row as i64 + dr, cell.col as i64 + dc);
                    if r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols {
                        if let Some(j) = index[r as usize * cols + c as usize] {
                            out[a] = j;
                        }
                    }
                }
                out
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            cells,
            index,
            next,
        })
    }

    pub fn n_states(&self) -> usize {
        self.cells.len()
    }

    pub fn state_of(&self, cell: Cell) -> Option<usize> {
        if cell.row < self.rows && cell.col < self.cols {
            self.index[cell.row * self.cols + cell.col]
        } else {
            None
        }
    }

    pub fn step(&self, s: usize, a: usize) -> usize {
        self.next[s][a]
    }

    /// Shortest step counts from every state to `goal`.
    pub fn distances_to(&self, goal: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_states()];
        dist[goal] = Some(0);
        let mut queue = std::collections::VecDeque::from([goal]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued states have distances");
            // Moves are symmetric, so predecessors are successors.
            for &v in &self.next[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Shortest path `from → to` inclusive, ties broken by action order.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let dist = self.distances_to(to);
        dist[from]?;
        let mut path = vec![from];
        let mut s = from;
        while s != to {
            let d = dist[s].expect("on a reachable path");
            s = (0..4)
                .map(|a| self.step(s, a))
                .find(|n| dist[*n] == Some(d - 1))
                .expect("a descending neighbour");
            path.push(s);
        }
        Some(path)
    }
}

/// Dense `Q[s][a][g]` table.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub n: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn filled(n: usize, v: f64) -> Self {
        Self {
            n,
            values: vec![v; n * 4 * n],
        }
    }

    fn idx(&self, s: usize, a: usize, g: usize) -> usize {
        (s * 4 + a) * self.n + g
    }

    pub fn get(&self, s: usize, a: usize, g: usize) -> f64 {
        self.values[self.idx(s, a, g)]
    }

    pub fn set(&mut self, s: usize, a: usize, g: usize, v: f64) {
        let i = self.idx(s, a, g);
        self.values[i] = v;
    }

    pub fn max_q(&self, s: usize, g: usize) -> f64 {
        (0..4).map(|a| self.get(s, a, g)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn linf(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Value iteration to a sup-norm residual below `1e-10`:
/// `Q(s,a,g) = 1` if the move lands on `g`, else `γ max_a' Q(s',a',g)`.
pub fn tabular_oracle(mdp: &GridMdp, gamma: f64) -> QTable {
    let n = mdp.n_states();
    let mut q = QTable::filled(n, 0.0);
    loop {
        let mut residual: f64 = 0.0;
        for s in 0..n {
            for a in 0..4 {
                let sn = mdp.step(s, a);
                for g in 0..n {
                    let v = if sn == g { 1.0 } else { gamma * q.max_q(sn, g) };
                    residual = residual.max((v - q.get(s, a, g)).abs());
                    q.set(s, a, g, v);
                }
            }
        }
        if residual < 1e-10 {
            return q;
        }
    }
}

/// A window of `h + 1` states that starts with an arbitrary first action
/// and then follows the shortest path to a behaviour destination, padded
/// with the destination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TabularWindow {
    pub states: Vec<usize>,
    pub first_action: usize,
}

/// Every `(start, first action, destination)` window of horizon `h`.
pub fn exhaustive_windows(mdp: &GridMdp, h: usize) -> Vec<TabularWindow> {
    let n = mdp.n_states();
    let mut out = Vec::with_capacity(n * 4 * n);
    for s in 0..n {
        for a in 0..4 {
            let s1 = mdp.step(s, a);
            for b in 0..n {
                let Some(path) = mdp.shortest_path(s1, b) else { continue };
                let mut states = vec![s];
                states.extend(path.iter().copied().chain(std::iter::repeat(b)).take(h));
                out.push(TabularWindow {
                    states,
                    first_action: a,
                });
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TabularTarget {
    Chaining,
    NaiveMax,
}

#[derive(Clone, Copy, Debug)]
pub struct TabularConfig {
    pub gamma: f64,
    pub horizon: usize,
    pub p_in_window: f64,
    pub step_size: f64,
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            horizon: 4,
            p_in_window: 0.5,
            step_size: 0.5,
            sweeps: 400,
            seed: 0,
        }
    }
}

/// Trains a table from a uniform random start in `[0, 1]` with window
/// targets and greedy bootstrapping. The random stream depends only on the
/// seed, so two runs with different targets see identical samples.
pub fn train_tabular(mdp: &GridMdp, cfg: &TabularConfig, target: TabularTarget) -> QTable {
    let n = mdp.n_states();
    let mut rng: Rng = rng::stream(cfg.seed, "tabular");
    let mut q = QTable::filled(n, 0.0);
    for v in q.values.iter_mut() {
        *v = rng.random::<f64>();
    }
    let mut windows = exhaustive_windows(mdp, cfg.horizon);
    let keep = 1.0 - cfg.step_size;
    for _ in 0..cfg.sweeps {
        windows.shuffle(&mut rng);
        for w in &windows {
            let goal = if rng.random_bool(cfg.p_in_window) {
                w.states[rng.random_range(1..=cfg.horizon)]
            } else {
                rng.random_range(0..n)
            };
            let achieved = (1..=cfg.horizon).find(|k| w.states[*k] == goal);
            let y = match target {
                TabularTarget::Chaining => chaining_target(achieved, cfg.gamma, q.max_q(w.states[1], goal)),
                TabularTarget::NaiveMax => {
                    let future: Vec<f64> = (1..=cfg.horizon).map(|k| q.max_q(w.states[k], goal)).collect();
                    naive_max_target(achieved, cfg.gamma, &future)
                }
            };
            let (s, a) = (w.states[0], w.first_action);
            q.set(s, a, goal, keep * q.get(s, a, goal) + cfg.step_size * y);
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_matches_closed_form_distances() {
        let mdp = GridMdp::parse(".....\n.#.#.\n.....\n.##..\n.....").unwrap();
        let q = tabular_oracle(&mdp, 0.98);
        for g in 0..mdp.n_states() {
            let d = mdp.distances_to(g);
            for s in 0..mdp.n_states() {
                for a in 0..4 {
                    let want = 0.98f64.powi(d[mdp.step(s, a)].unwrap() as i32);
                    assert!((q.get(s, a, g) - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn oracle_examples_on_a_line() {
        let mdp = GridMdp::open(1, 3).unwrap();
        let q = tabular_oracle(&mdp, 0.98);
        // Right is action 3: adjacent goal reached immediately.
        assert!((q.get(1, 3, 2) - 1.0).abs() < 1e-12);
        assert!((q.get(0, 3, 2) - 0.98).abs() < 1e-12);
    }

    #[test]
    fn windows_are_shortest_paths_after_the_first_move() {
        let mdp = GridMdp::open(3, 3).unwrap();
        let ws = exhaustive_windows(&mdp, 4);
        assert_eq!(ws.len(), 9 * 4 * 9);
        for w in &ws {
            assert_eq!(w.states.len(), 5);
            assert_eq!(w.states[1], mdp.step(w.states[0], w.first_action));
            for k in 1..4 {
                let d = mdp.distances_to(w.states[k + 1]);
                assert!(d[w.states[k]].unwrap() <= 1);
            }
        }
    }

    #[test]
    fn chaining_training_converges_and_naive_max_dominates_throughout() {
        let mdp = GridMdp::parse(".....\n.#.#.\n.....\n.##..\n.....").unwrap();
        let cfg = TabularConfig::default();
        let oracle = tabular_oracle(&mdp, cfg.gamma);
        assert!(train_tabular(&mdp, &cfg, TabularTarget::Chaining).linf(&oracle) <= 0.05);
        for sweeps in [1, 5, 20] {
            let short = TabularConfig { sweeps, ..cfg };
            let chain = train_tabular(&mdp, &short, TabularTarget::Chaining);
            let naive = train_tabular(&mdp, &short, TabularTarget::NaiveMax);
            assert!(naive.values.iter().zip(&chain.values).all(|(n, c)| n >= c));
        }
    }
}
