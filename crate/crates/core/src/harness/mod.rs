//! Training, evaluation, sweeps and rendering on top of the library modules.

pub mod config;
pub mod eval;
pub mod manifest;
pub mod oracle;
pub mod render;
pub mod stitch;
pub mod train;

pub use config::RunConfig;
pub use eval::{
    best_target_value, compute_references, evaluate, evaluate_run, mean_se, metrics_csv, normalized_score, sweep_csv,
    sweep_target_value, EvalRow, References, SweepRow, SWEEP_VALUES,
};
pub use manifest::{sha256_hex, Manifest};
pub use oracle::{gradient_checks, tabular_checks, OracleCheck};
pub use render::{read_episode, render_svg, sweep_svg, write_episode, EpisodeRecord};
pub use train::{load_run, train, LoadedRun, Trainer};

use crate::error::{Error, Result};
use crate::maze::Cell;

/// Parses `r,c-r,c;r,c-r,c` into cell pairs.
pub fn parse_routes(text: &str) -> Result<Vec<(Cell, Cell)>> {
    let cell = |s: &str| -> Result<Cell> {
        let (r, c) = s
            .trim()
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("bad cell `{s}`, expected `row,col`")))?;
        let num = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad cell coordinate `{v}`")))
        };
        Ok(Cell::new(num(r)?, num(c)?))
    };
    text.split(';')
        .filter(|r| !r.trim().is_empty())
        .map(|r| {
            let (a, b) = r
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("bad route `{r}`, expected `r,c-r,c`")))?;
            Ok((cell(a)?, cell(b)?))
        })
        .collect()
}

/// Parses a comma-separated list of reals.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{v}`")))
        })
        .collect()
}
