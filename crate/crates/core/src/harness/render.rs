//! Episode files and deterministic SVG output.

use std::fmt::Write as _;
use std::path::Path;

use super::eval::SweepRow;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::maze::MazeLayout;

const CELL_PX: f64 = 40.0;
const MARKER_PX: f64 = 6.0;

/// A rolled-out trajectory as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub layout: String,
    pub goal: [f64; 2],
    pub states: Vec<[f64; 4]>,
}

impl EpisodeRecord {
    /// Text format: `layout <name>`, `goal <x> <y>`, then one `s x y vx vy` line per state.
    pub fn to_text(&self) -> String {
        let mut s = format!("layout {}\ngoal {} {}\n", self.layout, self.goal[0], self.goal[1]);
        for st in &self.states {
            let _ = writeln!(s, "s {} {} {} {}", st[0], st[1], st[2], st[3]);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut layout = None;
        let mut goal = None;
        let mut states = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Format {
                offset: i as u64 + 1,
                msg: format!("malformed episode line `{line}`"),
            };
            let nums = |xs: &[&str]| {
                xs.iter()
                    .map(|x| x.parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<Vec<f64>>>()
            };
            match f.first().copied() {
                None => {}
                Some("layout") if f.len() == 2 => layout = Some(f[1].to_string()),
                Some("goal") if f.len() == 3 => {
                    let v = nums(&f[1..])?;
                    goal = Some([v[0], v[1]]);
                }
                Some("s") if f.len() == 5 => {
                    let v = nums(&f[1..])?;
                    states.push([v[0], v[1], v[2], v[3]]);
                }
                _ => return Err(bad()),
            }
        }
        let missing = |what: &str| Error::Format {
            offset: 0,
            msg: format!("episode file lacks a `{what}` line"),
        };
        Ok(Self {
            layout: layout.ok_or_else(|| missing("layout"))?,
            goal: goal.ok_or_else(|| missing("goal"))?,
            states,
        })
    }
}

pub fn write_episode(path: &Path, record: &EpisodeRecord) -> Result<()> {
    write_atomic(path, record.to_text().as_bytes())
}

pub fn read_episode(path: &Path) -> Result<EpisodeRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EpisodeRecord::parse(&text)
}

/// Walls as grey squares, the path as a polyline, start in blue, goal in red.
/// An empty trajectory renders the layout alone.
/// Maze `(x, y)` maps to pixels with `y` growing downward, like the grid rows.
pub fn render_svg(layout: &MazeLayout, record: &EpisodeRecord) -> String {
    let (w, h) = (layout.cols as f64 * CELL_PX, layout.rows as f64 * CELL_PX);
    let px = |v: f64| v * CELL_PX;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"white\"/>");
    for r in 0..layout.rows {
        for c in 0..layout.cols {
            if layout.is_wall(r as i64, c as i64) {
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.0}\" y=\"{:.0}\" width=\"{CELL_PX:.0}\" height=\"{CELL_PX:.0}\" fill=\"#555555\"/>",
                    c as f64 * CELL_PX,
                    r as f64 * CELL_PX
                );
            }
        }
    }
    if !record.states.is_empty() {
        let pts: Vec<String> = record
            .states
            .iter()
            .map(|st| format!("{:.2},{:.2}", px(st[0]), px(st[1])))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        let first = record.states[0];
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{MARKER_PX:.0}\" fill=\"blue\"/>",
            px(first[0]),
            px(first[1])
        );
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{MARKER_PX:.0}\" fill=\"red\"/>",
            px(record.goal[0]),
            px(record.goal[1])
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Mean score (or mean return when scores are absent) against target value
/// on a log axis, one polyline per layout.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let y_of = |r: &SweepRow| {
        if r.mean_score.is_nan() {
            r.mean_return
        } else {
            r.mean_score
        }
    };
    let finite = |v: f64| v.is_finite();
    let xs: Vec<f64> = rows
        .iter()
        .map(|r| r.target_value.ln())
        .filter(|v| finite(*v))
        .collect();
    let ys: Vec<f64> = rows.iter().map(y_of).filter(|v| finite(*v)).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (lo.min(0.0), lo.max(0.0) + 1.0)
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let sx = |v: f64| PAD + (v.ln() - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W:.0}\" height=\"{H:.0}\">\n");
    let _ = writeln!(s, "<rect width=\"{W:.0}\" height=\"{H:.0}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<path d=\"M{PAD:.0},{:.0} L{PAD:.0},{:.0} L{:.0},{:.0}\" fill=\"none\" stroke=\"black\"/>",
        PAD,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let mut layouts: Vec<&str> = rows.iter().map(|r| r.layout.as_str()).collect();
    layouts.dedup();
    for (i, name) in layouts.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.layout == *name && finite(r.target_value.ln()) && finite(y_of(r)))
            .map(|r| format!("{:.2},{:.2}", sx(r.target_value), sy(y_of(r))))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.0}\" y=\"{:.0}\" fill=\"{color}\" font-size=\"12\">{name}</text>",
            W - PAD - 60.0,
            PAD + 14.0 * i as f64
        );
    }
    for r in rows.iter().filter(|r| finite(r.target_value.ln())) {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.0}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            sx(r.target_value),
            H - PAD + 14.0,
            r.target_value
        );
    }
    s.push_str("</svg>\n");
    s
}
