use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ssd_core::dataset::{collect, collect_routes, CollectConfig};
use ssd_core::gamdp::GaMdpSpec;
use ssd_core::harness::eval::{
    compute_references, evaluate_run, metrics_csv, sweep_csv, sweep_target_value, References, SweepRow,
};
use ssd_core::harness::{
    best_target_value, gradient_checks, load_run, parse_routes, parse_values, read_episode, render_svg, sweep_svg,
    tabular_checks, train, write_episode, EpisodeRecord, Manifest, RunConfig, SWEEP_VALUES,
};
use ssd_core::io_util::write_atomic;
use ssd_core::maze::{MazeLayout, Task};

#[derive(Parser)]
#[command(
    name = "ssd",
    about = "Sub-trajectory stitching with a value-conditioned diffusion planner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect a scripted offline dataset.
    GenData {
        #[arg(long)]
        layout: String,
        #[arg(long)]
        transitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Restrict episodes to fixed routes, e.g. `1,1-1,3;1,3-3,1`.
        #[arg(long)]
        routes: Option<String>,
        #[arg(long, default_value_t = 0.98)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        tolerance: f64,
        #[arg(long, default_value_t = 200)]
        max_episode_steps: usize,
        #[arg(long, default_value_t = 0.1)]
        action_noise: f64,
    },
    /// Train critic, denoiser and inverse dynamics.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override config keys, `key=value`.
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint and write per-episode metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layout: Option<String>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        target_v: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "references.txt")]
        references: PathBuf,
        /// Also write one episode file per rollout into this directory.
        #[arg(long)]
        episodes_dir: Option<PathBuf>,
    },
    /// Evaluate checkpoints over a grid of target values.
    Sweep {
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        values: Option<String>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[arg(long, default_value = "sweep.svg")]
        plot: PathBuf,
        #[arg(long, default_value = "references.txt")]
        references: PathBuf,
    },
    /// Render an episode file to SVG.
    Render {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the tabular and gradient oracle suites.
    OracleCheck,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Loads references, computing and storing them for `layout` when absent.
fn ensure_references(path: &Path, layout: &MazeLayout, spec: &GaMdpSpec, max_steps: usize) -> Result<References> {
    let mut refs = if path.exists() {
        References::load(path)?
    } else {
        References::default()
    };
    if refs.get(&layout.name).is_err() {
        let (r, e) = compute_references(layout, spec, Task::FixedGoal, 1000, 0, max_steps)?;
        eprintln!("references for {}: random {r}, expert {e}", layout.name);
        refs.entries.insert(layout.name.clone(), (r, e));
        refs.save(path)?;
    }
    Ok(refs)
}

fn gen_data(
    layout: &str,
    transitions: usize,
    seed: u64,
    out: &Path,
    routes: Option<&str>,
    spec: GaMdpSpec,
    action_noise: f64,
) -> Result<()> {
    let layout = MazeLayout::builtin(layout)?;
    let cfg = CollectConfig {
        action_noise,
        ..CollectConfig::default()
    };
    let ds = match routes {
        Some(r) => collect_routes(&layout, &spec, &cfg, &parse_routes(r)?, transitions, seed)?,
        None => collect(&layout, &spec, &cfg, transitions, seed)?,
    };
    ds.save(out)?;
    let mut m = Manifest::bare("gen-data", seed);
    m.push("layout", &layout.name);
    m.push("transitions", &transitions.to_string());
    m.push("routes", routes.unwrap_or("-"));
    m.push("action_noise", &action_noise.to_string());
    m.output_file(out)?;
    m.write(&manifest_path(out))?;
    println!(
        "{} episodes, {} states -> {}",
        ds.episodes.len(),
        ds.total_steps(),
        out.display()
    );
    Ok(())
}

fn run_train(config: Option<&Path>, out_dir: &Path, overrides: &[String]) -> Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("override `{o}` is not key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let out = train(&cfg, out_dir)?;
    if let Some(last) = out.log.last() {
        println!(
            "iteration {}: critic loss {:.5}, diffusion loss {:.5}, {:.1}s",
            last.iteration, last.critic_loss, last.diffusion_loss, last.wall_seconds
        );
    }
    if let Some(mse) = out.invdyn_heldout_mse {
        println!("inverse dynamics held-out mse {mse:.5}");
    }
    println!("checkpoint -> {}", out.checkpoint.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_eval(
    checkpoint: &Path,
    layout: Option<&str>,
    episodes: usize,
    target_v: Option<f64>,
    seed: u64,
    out: &Path,
    references: &Path,
    episodes_dir: Option<&Path>,
) -> Result<()> {
    let mut run = load_run(checkpoint)?;
    if let Some(v) = target_v {
        run.config.target_value = v;
    }
    let layout = MazeLayout::builtin(layout.unwrap_or(&run.config.layout))?;
    let refs = ensure_references(references, &layout, &run.spec, run.config.max_steps)?;
    let rows = evaluate_run(&run, &layout, Task::FixedGoal, episodes, seed, Some(&refs))?;
    write_atomic(out, metrics_csv(&rows).as_bytes())?;
    if let Some(dir) = episodes_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for r in &rows {
            let rec = EpisodeRecord {
                layout: layout.name.clone(),
                goal: r.result.goal,
                states: r.result.states.clone(),
            };
            write_episode(&dir.join(format!("episode_{:04}.txt", r.episode)), &rec)?;
        }
    }
    let summary = SweepRow::from_rows(&layout.name, run.config.target_value, &rows);
    println!(
        "{} v={} episodes={}: success {:.3} ± {:.3}, return {:.4} ± {:.4}, score {:.1} ± {:.1}",
        layout.name,
        summary.target_value,
        summary.episodes,
        summary.success_rate,
        summary.success_se,
        summary.mean_return,
        summary.return_se,
        summary.mean_score,
        summary.score_se
    );
    let mut m = Manifest::new("eval", &run.config);
    m.push("eval_seed", &seed.to_string());
    m.push("episodes", &episodes.to_string());
    m.push("layout", &layout.name);
    m.input("checkpoint", checkpoint, &std::fs::read(checkpoint)?);
    m.input("references", references, &std::fs::read(references)?);
    m.output_file(out)?;
    m.write(&manifest_path(out))?;
    Ok(())
}

fn run_sweep(
    checkpoints: &[PathBuf],
    values: Option<&str>,
    episodes: usize,
    seed: u64,
    out: &Path,
    plot: &Path,
    references: &Path,
) -> Result<()> {
    let values = match values {
        Some(v) => parse_values(v)?,
        None => SWEEP_VALUES.to_vec(),
    };
    let mut rows = Vec::new();
    let mut m = Manifest::bare("sweep", seed);
    for ck in checkpoints {
        let run = load_run(ck)?;
        let layout = MazeLayout::builtin(&run.config.layout)?;
        let refs = ensure_references(references, &layout, &run.spec, run.config.max_steps)?;
        let layout_rows = sweep_target_value(&run, &layout, &values, episodes, seed, Some(&refs))?;
        if let Some(best) = best_target_value(&layout_rows) {
            println!("{}: best target value {best}", layout.name);
        }
        rows.extend(layout_rows);
        m.input("checkpoint", ck, &std::fs::read(ck)?);
    }
    write_atomic(out, sweep_csv(&rows).as_bytes())?;
    write_atomic(plot, sweep_svg(&rows).as_bytes())?;
    m.push("episodes", &episodes.to_string());
    m.push(
        "values",
        &values.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    );
    m.output_file(out)?;
    m.output_file(plot)?;
    m.write(&manifest_path(out))?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}

fn run_render(episode: &Path, out: &Path) -> Result<()> {
    let rec = read_episode(episode)?;
    let layout = MazeLayout::builtin(&rec.layout)?;
    write_atomic(out, render_svg(&layout, &rec).as_bytes())?;
    let mut m = Manifest::bare("render", 0);
    m.input("episode", episode, &std::fs::read(episode)?);
    m.output_file(out)?;
    m.write(&manifest_path(out))?;
    Ok(())
}

fn oracle_check() -> bool {
    let mut ok = true;
    for c in tabular_checks().into_iter().chain(gradient_checks(0)) {
        println!("{}", c.line());
        ok &= c.passed;
    }
    ok
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData {
            layout,
            transitions,
            seed,
            out,
            routes,
            gamma,
            tolerance,
            max_episode_steps,
            action_noise,
        } => {
            if transitions == 0 {
                bail!("--transitions must be positive");
            }
            let spec = GaMdpSpec::maze(gamma, tolerance, max_episode_steps)?;
            gen_data(&layout, transitions, seed, &out, routes.as_deref(), spec, action_noise)?;
        }
        Command::Train {
            config,
            out_dir,
            overrides,
        } => run_train(config.as_deref(), &out_dir, &overrides)?,
        Command::Eval {
            checkpoint,
            layout,
            episodes,
            target_v,
            seed,
            out,
            references,
            episodes_dir,
        } => run_eval(
            &checkpoint,
            layout.as_deref(),
            episodes,
            target_v,
            seed,
            &out,
            &references,
            episodes_dir.as_deref(),
        )?,
        Command::Sweep {
            checkpoint,
            values,
            episodes,
            seed,
            out,
            plot,
            references,
        } => run_sweep(&checkpoint, values.as_deref(), episodes, seed, &out, &plot, &references)?,
        Command::Render { episode, out } => run_render(&episode, &out)?,
        Command::OracleCheck => {
            return Ok(if oracle_check() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
    }
    Ok(ExitCode::SUCCESS)
}
