use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Grid coordinate `(row, col)`; row grows downward, matching the text fixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Continuous position of the cell center as `(x, y)`.
    pub fn center(self) -> [f64; 2] {
        [self.col as f64 + 0.5, self.row as f64 + 0.5]
    }
}

/// Occupancy grid with designated start and goal cells.
#[derive(Clone, Debug, PartialEq)]
pub struct MazeLayout {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    walls: Vec<bool>,
    pub cell_size: f64,
    pub start_cells: Vec<Cell>,
    pub goal_cells: Vec<Cell>,
}

const UMAZE: &str = include_str!("../../layouts/umaze.txt");
const MEDIUM: &str = include_str!("../../layouts/medium.txt");
const LARGE: &str = include_str!("../../layouts/large.txt");

pub const LAYOUT_NAMES: [&str; 3] = ["umaze", "medium", "large"];

impl MazeLayout {
    /// Shipped fixture by name (`umaze`, `medium`, `large`).
    pub fn builtin(name: &str) -> Result<Self> {
        let (canonical, text) = match name {
            "umaze" | "u-maze" => ("umaze", UMAZE),
            "medium" => ("medium", MEDIUM),
            "large" => ("large", LARGE),
            other => return Err(Error::Layout(format!("unknown layout `{other}`"))),
        };
        Self::parse(canonical, text)
    }

    /// Parses the text grid format: `#` wall, `.` free, `S` start, `G` goal.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::Layout("empty grid".into()));
        }
        let cols = lines[0].chars().count();
        let rows = lines.len();
        let mut walls = Vec::with_capacity(rows * cols);
        let mut start_cells = Vec::new();
        let mut goal_cells = Vec::new();
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::Layout(format!(
                    "row {r} has {} columns, expected {cols}",
                    line.chars().count()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' => {
                        walls.push(false);
                        start_cells.push(Cell::new(r, c));
                    }
                    'G' => {
                        walls.push(false);
                        goal_cells.push(Cell::new(r, c));
                    }
                    other => return Err(Error::Layout(format!("unexpected character `{other}` at ({r}, {c})"))),
                }
            }
        }
        let layout = Self {
            name: name.to_string(),
            rows,
            cols,
            walls,
            cell_size: 1.0,
            start_cells,
            goal_cells,
        };
        layout.validate()?;
        Ok(layout)
    }

    fn validate(&self) -> Result<()> {
        for r in 0..self.rows {
            for c in 0..self.cols {
                let border = r == 0 || c == 0 || r + 1 == self.rows || c + 1 == self.cols;
                if border && !self.is_wall(r as i64, c as i64) {
                    return Err(Error::Layout(format!("border cell ({r}, {c}) is not a wall")));
                }
            }
        }
        if self.free_cells().is_empty() {
            return Err(Error::Layout("no free cell".into()));
        }
        for s in &self.start_cells {
            let dist = self.distances_from(*s);
            for g in &self.goal_cells {
                if dist[self.index(*g)].is_none() {
                    return Err(Error::Layout(format!("goal {g:?} unreachable from start {s:?}")));
                }
            }
        }
        Ok(())
    }

    fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    /// Out-of-grid coordinates count as walls.
    pub fn is_wall(&self, row: i64, col: i64) -> bool {
        if row < 0 || col < 0 || row as usize >= self.rows || col as usize >= self.cols {
            return true;
        }
        self.walls[row as usize * self.cols + col as usize]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_wall(cell.row as i64, cell.col as i64)
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| Cell::new(r, c)))
            .filter(|c| self.is_free(*c))
            .collect()
    }

    /// Cell containing a continuous position, if it is inside the grid.
    pub fn cell_of(&self, pos: [f64; 2]) -> Option<Cell> {
        let (c, r) = (pos[0].floor(), pos[1].floor());
        if r < 0.0 || c < 0.0 || r as usize >= self.rows || c as usize >= self.cols {
            return None;
        }
        Some(Cell::new(r as usize, c as usize))
    }

    pub fn position_in_wall(&self, pos: [f64; 2]) -> bool {
        self.is_wall(pos[1].floor() as i64, pos[0].floor() as i64)
    }

    fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        const DIRS: [(i64, i64); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];
        DIRS.iter().filter_map(move |(dr, dc)| {
            let (r, c) = (cell.row as i64 + dr, cell.col as i64 + dc);
            (!self.is_wall(r, c)).then(|| Cell::new(r as usize, c as usize))
        })
    }

    /// BFS step counts from `from` to every cell (`None` for walls and unreachable cells).
    pub fn distances_from(&self, from: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.rows * self.cols];
        if !self.is_free(from) {
            return dist;
        }
        dist[self.index(from)] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[self.index(cur)].unwrap_or(0);
            for nb in self.neighbors(cur) {
                let i = self.index(nb);
                if dist[i].is_none() {
                    dist[i] = Some(d + 1);
                    queue.push_back(nb);
                }
            }
        }
        dist
    }

    /// Shortest 4-connected cell path, endpoints included.
    pub fn bfs_path(&self, from: Cell, to: Cell) -> Result<Vec<Cell>> {
        if !self.is_free(from) || !self.is_free(to) {
            return Err(Error::Unreachable(format!("{from:?} -> {to:?} touches a wall")));
        }
        let dist = self.distances_from(to);
        if dist[self.index(from)].is_none() {
            return Err(Error::Unreachable(format!("{to:?} unreachable from {from:?}")));
        }
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            let d = dist[self.index(cur)].unwrap_or(0);
            // Deterministic tie-break by neighbor order.
            cur = self
                .neighbors(cur)
                .find(|nb| dist[self.index(*nb)] == Some(d - 1))
                .ok_or_else(|| Error::Unreachable("broken distance field".into()))?;
            path.push(cur);
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_are_connected() {
        for name in LAYOUT_NAMES {
            let l = MazeLayout::builtin(name).unwrap();
            assert_eq!(l.name, name);
            let free = l.free_cells();
            let dist = l.distances_from(free[0]);
            assert!(
                free.iter().all(|c| dist[l.index(*c)].is_some()),
                "{name} has disconnected cells"
            );
            assert_eq!(l.start_cells.len(), 1);
            assert_eq!(l.goal_cells.len(), 1);
        }
        let dims: Vec<(usize, usize)> = LAYOUT_NAMES
            .iter()
            .map(|n| MazeLayout::builtin(n).unwrap())
            .map(|l| (l.rows, l.cols))
            .collect();
        assert_eq!(dims, vec![(5, 5), (8, 8), (9, 12)]);
    }

    #[test]
    fn rejects_open_border_and_disconnected_goal() {
        assert!(MazeLayout::parse("x", "###\n#S.\n###").is_err());
        assert!(MazeLayout::parse("x", "#####\n#S#G#\n#####").is_err());
        assert!(MazeLayout::parse("x", "###\n###\n###").is_err());
        assert!(MazeLayout::parse("x", "#####\n#S?G#\n#####").is_err());
    }

    #[test]
    fn corridor_path_lengths() {
        let l = MazeLayout::parse("corridor", "######\n#S..G#\n######").unwrap();
        let p = l.bfs_path(Cell::new(1, 1), Cell::new(1, 4)).unwrap();
        assert_eq!(p.len() - 1, 3);
        assert_eq!(l.bfs_path(Cell::new(1, 2), Cell::new(1, 2)).unwrap().len(), 1);
    }

    #[test]
    fn umaze_corner_to_corner_goes_around() {
        let l = MazeLayout::builtin("umaze").unwrap();
        let p = l.bfs_path(l.start_cells[0], l.goal_cells[0]).unwrap();
        // (1,1) -> (1,3) -> (3,3) -> (3,1): 2 + 2 + 2 moves
        assert_eq!(p.len() - 1, 6);
        assert!(p.iter().all(|c| l.is_free(*c)));
    }
}
