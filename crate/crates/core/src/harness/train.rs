//! Joint critic and denoiser training over relabeled windows.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::RunConfig;
use super::manifest::Manifest;
use crate::critic::{am_one_step_target, chaining_target, naive_max_target, ActionSource, CriticNet, TargetMode};
use crate::dataset::{pad_successful, OfflineDataset};
use crate::diffusion::{
    ddpm_loss, reverse_sample, windows_to_tensor, CondPromptUnet, Condition, NoiseSchedule, Normalizer, UnetConfig,
};
use crate::error::{Error, Result};
use crate::gamdp::{goal_reached, GaMdpSpec, SubTrajectory};
use crate::io_util::write_atomic;
use crate::nn::{checkpoint, Adam, AdamConfig, Graph, Tensor};
use crate::planner::{fit_inverse_dynamics, InverseDynamicsModel, PlanModels, RegressorConfig};
use crate::relabel::{relabel, RelabelOutcome};
use crate::rng::{self, Rng};

pub const CHECKPOINT_FILE: &str = "checkpoint.ssdc";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "iteration,critic_loss,diffusion_loss,wall_seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub critic_loss: f64,
    pub diffusion_loss: f64,
    pub wall_seconds: f64,
}

/// Fits the `state ‖ action` normalizer to every dataset row.
pub fn fit_normalizer(dataset: &OfflineDataset) -> Result<Normalizer> {
    let spec = &dataset.spec;
    let mut rows = Vec::with_capacity(dataset.total_steps());
    for ep in &dataset.episodes {
        for t in 0..ep.len(spec) {
            let mut r = ep.state(spec, t).to_vec();
            r.extend_from_slice(ep.action(spec, t));
            rows.push(r);
        }
    }
    Normalizer::fit(rows.iter().map(Vec::as_slice), spec.state_dim + spec.action_dim)
}

pub fn unet_config(cfg: &RunConfig, spec: &GaMdpSpec) -> UnetConfig {
    UnetConfig {
        token_dim: cfg.token_dim,
        heads: cfg.heads,
        levels: cfg.levels,
        ..UnetConfig::new(cfg.horizon, spec.state_dim, spec.action_dim, spec.goal_dim)
    }
}

/// Training state for one run.
pub struct Trainer {
    pub cfg: RunConfig,
    pub dataset: OfflineDataset,
    pub norm: Normalizer,
    pub schedule: NoiseSchedule<f32>,
    pub unet: CondPromptUnet<f32>,
    pub critic: CriticNet<f32>,
    pub lagged: CriticNet<f32>,
    unet_opt: Adam<f32>,
    critic_opt: Adam<f32>,
    data_rng: Rng,
    noise_rng: Rng,
    pub iteration: usize,
}

impl Trainer {
    pub fn new(cfg: RunConfig, mut dataset: OfflineDataset) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::InputDomain("training needs a non-empty dataset".into()));
        }
        let spec = dataset.spec.clone();
        if (spec.gamma - cfg.gamma).abs() > 1e-12 || (spec.goal_tolerance - cfg.goal_tolerance).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "config (gamma {}, tolerance {}) disagrees with dataset (gamma {}, tolerance {})",
                cfg.gamma, cfg.goal_tolerance, spec.gamma, spec.goal_tolerance
            )));
        }
        dataset.index_windows(cfg.horizon, cfg.window_tail);
        let norm = fit_normalizer(&dataset)?;
        let schedule = NoiseSchedule::cosine(cfg.diffusion_steps)?;
        let unet = CondPromptUnet::new(unet_config(&cfg, &spec), &mut rng::stream(cfg.seed, "init/unet"))?;
        let mut critic = CriticNet::new(
            spec.state_dim,
            spec.action_dim,
            spec.goal_dim,
            &cfg.critic_hidden,
            &mut rng::stream(cfg.seed, "init/critic"),
        )?;
        critic.input_norm = Some(norm.clone());
        let lagged = critic.clone();
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        Ok(Self {
            unet_opt: Adam::new(&unet.params, adam),
            critic_opt: Adam::new(&critic.params, adam),
            data_rng: rng::stream(cfg.seed, rng::STREAM_DATA),
            noise_rng: rng::stream(cfg.seed, rng::STREAM_NOISE),
            cfg,
            dataset,
            norm,
            schedule,
            unet,
            critic,
            lagged,
            iteration: 0,
        })
    }

    fn bootstrap_critic(&self) -> &CriticNet<f32> {
        if self.cfg.lagged_critic {
            &self.lagged
        } else {
            &self.critic
        }
    }

    /// `Q(s, a', g)` where `a'` is drawn per the configured action source.
    /// Each query is `(state, dataset action, goal, value hint)`.
    fn bootstrap_q(&mut self, queries: &[(Vec<f32>, Vec<f32>, Vec<f32>, f32)]) -> Result<Vec<f64>> {
        if queries.is_empty() {
            return Ok(vec![]);
        }
        let actions: Vec<Vec<f32>> = match self.cfg.action_source {
            ActionSource::DatasetNextAction => queries.iter().map(|q| q.1.clone()).collect(),
            ActionSource::DiffusionFast => {
                let conds: Vec<Condition> = queries
                    .iter()
                    .map(|(s, _, g, v)| Condition {
                        goal: g.clone(),
                        value: *v,
                        inpaint_state: Some(s.clone()),
                    })
                    .collect();
                let plans = reverse_sample(
                    &self.unet,
                    &self.schedule,
                    &self.norm,
                    &conds,
                    Some(self.cfg.fast_steps),
                    &mut self.noise_rng,
                )?;
                plans.iter().map(|p| p.action(0).to_vec()).collect()
            }
        };
        let s: Vec<f32> = queries.iter().flat_map(|q| q.0.iter().copied()).collect();
        let a: Vec<f32> = actions.into_iter().flatten().collect();
        let g: Vec<f32> = queries.iter().flat_map(|q| q.2.iter().copied()).collect();
        self.bootstrap_critic().q_values(&s, &a, &g)
    }

    fn targets(
        &mut self,
        windows: &[SubTrajectory<f32>],
        outcomes: &[RelabelOutcome<f32>],
        q_now: &[f64],
    ) -> Result<Vec<f64>> {
        let gamma = self.cfg.gamma;
        let spec = self.dataset.spec.clone();
        let h = self.cfg.horizon;
        let mut y = vec![0.0; windows.len()];
        let mut queries = Vec::new();
        let mut owners = Vec::new();
        for (i, (x, o)) in windows.iter().zip(outcomes).enumerate() {
            let hint = (q_now[i] / gamma).clamp(0.0, 1.0) as f32;
            let done = match self.cfg.target_mode {
                TargetMode::MultiStep | TargetMode::NaiveMax => o.achieved_index.is_some(),
                TargetMode::AmOneStep => goal_reached(x.state(0), &o.goal, &spec)?,
            };
            if done {
                y[i] = match self.cfg.target_mode {
                    TargetMode::AmOneStep => am_one_step_target(true, gamma, 0.0),
                    _ => chaining_target(o.achieved_index, gamma, 0.0),
                };
                continue;
            }
            let last = if self.cfg.target_mode == TargetMode::NaiveMax {
                h
            } else {
                1
            };
            for k in 1..=last {
                queries.push((x.state(k).to_vec(), x.action(k).to_vec(), o.goal.clone(), hint));
                owners.push(i);
            }
        }
        let q = self.bootstrap_q(&queries)?;
        let mut futures: Vec<Vec<f64>> = vec![Vec::new(); windows.len()];
        for (owner, v) in owners.into_iter().zip(q) {
            futures[owner].push(v);
        }
        for (i, f) in futures.iter().enumerate() {
            if f.is_empty() {
                continue;
            }
            y[i] = match self.cfg.target_mode {
                TargetMode::MultiStep => chaining_target(None, gamma, f[0]),
                TargetMode::AmOneStep => am_one_step_target(false, gamma, f[0]),
                TargetMode::NaiveMax => naive_max_target(None, gamma, f),
            };
        }
        Ok(y)
    }

    /// One iteration: sample and relabel, critic update, padding, denoiser update.
    pub fn step(&mut self) -> Result<(f64, f64)> {
        let b = self.cfg.batch_size;
        let spec = self.dataset.spec.clone();
        let mut windows = Vec::with_capacity(b);
        let mut outcomes = Vec::with_capacity(b);
        for _ in 0..b {
            let (x, _, _) = self.dataset.sample_window(&mut self.data_rng)?;
            let o = relabel(
                self.cfg.relabel,
                &x,
                &self.dataset,
                self.cfg.p_in_window,
                &mut self.data_rng,
            )?;
            windows.push(x);
            outcomes.push(o);
        }
        let s0: Vec<f32> = windows.iter().flat_map(|x| x.state(0).iter().copied()).collect();
        let a0: Vec<f32> = windows.iter().flat_map(|x| x.action(0).iter().copied()).collect();
        let goals: Vec<f32> = outcomes.iter().flat_map(|o| o.goal.iter().copied()).collect();

        let q_boot = self.bootstrap_critic().q_values(&s0, &a0, &goals)?;
        let y = self.targets(&windows, &outcomes, &q_boot)?;
        let inputs = self.critic.inputs(&s0, &a0, &goals)?;
        let (critic_loss, grads) = {
            let mut g = Graph::new(&self.critic.params);
            let l = self.critic.td_loss(&mut g, inputs, &y);
            (g.value(l).data()[0] as f64, g.backward(l))
        };
        self.critic.params.accumulate(&grads);
        self.critic_opt.step(&mut self.critic.params);
        if self.cfg.lagged_critic {
            self.lagged.params.ema_update(&self.critic.params, self.cfg.lag_rate);
        }

        let values: Vec<f32> = if self.cfg.value_from_lagged {
            &self.lagged
        } else {
            &self.critic
        }
        .q_values(&s0, &a0, &goals)?
        .into_iter()
        .map(|v| v as f32)
        .collect();
        let padded: Vec<SubTrajectory<f32>> = windows
            .iter()
            .zip(&outcomes)
            .map(|(x, o)| match o.achieved_index {
                Some(k) => pad_successful(x, k),
                None => Ok(x.clone()),
            })
            .collect::<Result<_>>()?;
        let x0 = windows_to_tensor::<f32>(&padded, &self.norm);
        let goals_n: Vec<f32> = outcomes
            .iter()
            .flat_map(|o| self.norm.normalize_goal(&o.goal))
            .collect();
        let goals_t = Tensor::from_vec(b, spec.goal_dim, goals_n);
        let (diffusion_loss, grads) = {
            let mut g = self.unet.graph();
            let l = ddpm_loss(
                &self.unet,
                &mut g,
                &self.schedule,
                &x0,
                &goals_t,
                &values,
                self.cfg.action_weight,
                &mut self.noise_rng,
            );
            (g.value(l).data()[0] as f64, g.backward(l))
        };
        self.unet.params.accumulate(&grads);
        self.unet_opt.step(&mut self.unet.params);
        self.iteration += 1;
        if !critic_loss.is_finite() || !diffusion_loss.is_finite() {
            return Err(Error::InputDomain(format!(
                "non-finite loss at iteration {}: critic {critic_loss}, diffusion {diffusion_loss}",
                self.iteration
            )));
        }
        Ok((critic_loss, diffusion_loss))
    }

    pub fn fit_inverse_dynamics(&self) -> Result<Option<(InverseDynamicsModel, f64)>> {
        if self.cfg.invdyn_iterations == 0 {
            return Ok(None);
        }
        let rc = RegressorConfig {
            hidden: self.cfg.invdyn_hidden.clone(),
            iterations: self.cfg.invdyn_iterations,
            seed: self.cfg.seed,
            ..RegressorConfig::default()
        };
        fit_inverse_dynamics(&self.dataset, &rc).map(Some)
    }

    /// Snapshot of the denoiser bundle for planning.
    pub fn plan_models(&self, inverse_dynamics: Option<InverseDynamicsModel>) -> PlanModels {
        PlanModels {
            unet: self.unet.clone(),
            schedule: self.schedule.clone(),
            norm: self.norm.clone(),
            inverse_dynamics,
        }
    }

    /// Runs all configured iterations, returning per-iteration losses.
    pub fn run(&mut self) -> Result<Vec<(f64, f64)>> {
        (0..self.cfg.iterations).map(|_| self.step()).collect()
    }

    pub fn checkpoint_tensors(&self, invdyn: Option<&InverseDynamicsModel>) -> Vec<(String, Tensor<f32>)> {
        let mut t = self.unet.params.export("unet/");
        t.extend(self.critic.params.export("critic/"));
        if let Some(f) = invdyn {
            t.extend(f.net.export("invdyn/"));
        }
        t.extend(self.norm.to_tensors());
        t
    }
}

pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log: Vec<LogRow>,
    pub invdyn_heldout_mse: Option<f64>,
}

fn log_csv(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.iteration, r.critic_loss, r.diffusion_loss, r.wall_seconds
        ));
    }
    s
}

/// Runs a full training job and writes checkpoint, config, log and manifest
/// into `out_dir`.
pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutput> {
    let dataset_bytes = std::fs::read(&cfg.dataset).map_err(|e| Error::io(&cfg.dataset, e))?;
    let dataset = OfflineDataset::from_bytes(&dataset_bytes)?;
    let mut trainer = Trainer::new(cfg.clone(), dataset)?;
    let start = Instant::now();
    let mut log = Vec::new();
    let every = cfg.log_every.max(1);
    for it in 1..=cfg.iterations {
        let (cl, dl) = trainer.step()?;
        if it % every == 0 || it == cfg.iterations {
            log.push(LogRow {
                iteration: it,
                critic_loss: cl,
                diffusion_loss: dl,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
            write_atomic(&out_dir.join(LOG_FILE), log_csv(&log).as_bytes())?;
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < cfg.iterations {
            checkpoint::save(
                &out_dir.join(format!("checkpoint_{it}.ssdc")),
                &trainer.checkpoint_tensors(None),
            )?;
        }
    }
    let invdyn = trainer.fit_inverse_dynamics()?;
    let path = out_dir.join(CHECKPOINT_FILE);
    checkpoint::save(&path, &trainer.checkpoint_tensors(invdyn.as_ref().map(|x| &x.0)))?;
    write_atomic(&out_dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    write_atomic(&out_dir.join(LOG_FILE), log_csv(&log).as_bytes())?;
    let mut m = Manifest::new("train", cfg);
    m.input("dataset", &cfg.dataset, &dataset_bytes);
    m.output_file(&path)?;
    m.write(&out_dir.join("manifest.txt"))?;
    Ok(TrainOutput {
        checkpoint: path,
        log,
        invdyn_heldout_mse: invdyn.map(|x| x.1),
    })
}

/// Everything a trained run provides for evaluation.
pub struct LoadedRun {
    pub config: RunConfig,
    pub spec: GaMdpSpec,
    pub models: PlanModels,
    pub critic: CriticNet<f32>,
}

/// Loads `checkpoint` plus the `config.txt` written beside it.
pub fn load_run(checkpoint_path: &Path) -> Result<LoadedRun> {
    let dir = checkpoint_path.parent().unwrap_or(Path::new("."));
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let tensors = checkpoint::load(checkpoint_path)?;
    let spec = GaMdpSpec::maze(config.gamma, config.goal_tolerance, config.max_steps)?;
    let norm = Normalizer::from_tensors(&tensors)?;
    let mut unet = CondPromptUnet::new(unet_config(&config, &spec), &mut rng::stream(0, "load"))?;
    unet.params.import(&tensors, "unet/")?;
    let mut critic = CriticNet::new(
        spec.state_dim,
        spec.action_dim,
        spec.goal_dim,
        &config.critic_hidden,
        &mut rng::stream(0, "load"),
    )?;
    critic.params.import(&tensors, "critic/")?;
    critic.input_norm = Some(norm.clone());
    let inverse_dynamics = if tensors.iter().any(|(n, _)| n.starts_with("invdyn/")) {
        let mut f = InverseDynamicsModel::new(
            spec.state_dim,
            spec.action_dim,
            &config.invdyn_hidden,
            &mut rng::stream(0, "load"),
        )?;
        f.net.import(&tensors, "invdyn/")?;
        Some(f)
    } else {
        None
    };
    let schedule = NoiseSchedule::cosine(config.diffusion_steps)?;
    Ok(LoadedRun {
        config,
        spec,
        models: PlanModels {
            unet,
            schedule,
            norm,
            inverse_dynamics,
        },
        critic,
    })
}
