//! Offline episode store: collection with the scripted controller, window
//! sampling with terminal padding, the PAD operation, and the binary file.

use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::gamdp::{goal_reached, Episode, GaMdpSpec, SubTrajectory};
use crate::io_util::{push_f32s, write_atomic, Reader};
use crate::maze::{hold_action, perturb, step, Cell, EnvState, MazeLayout, PhysicsParams, WaypointFollower};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SSD1";
pub const VERSION: u32 = 1;

pub const DEFAULT_GAMMA: f64 = 0.98;
pub const DEFAULT_TOLERANCE: f64 = 0.5;
pub const DEFAULT_MAX_EPISODE_STEPS: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub state_dim: u32,
    pub action_dim: u32,
    pub goal_dim: u32,
    pub n_episodes: u32,
    pub collection_seed: u64,
}

/// Which start offsets are indexed per episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowTail {
    /// `t ∈ [0, T−1]`; windows running past the end repeat the terminal entry.
    Pad,
    /// `t ∈ [0, T−h]` (just `t = 0` for episodes shorter than the window).
    Drop,
}

#[derive(Clone, Debug)]
pub struct OfflineDataset {
    pub spec: GaMdpSpec,
    pub collection_seed: u64,
    pub episodes: Vec<Episode<f32>>,
    horizon: usize,
    tail: WindowTail,
    window_index: Vec<(u32, u32)>,
}

impl PartialEq for OfflineDataset {
    fn eq(&self, other: &Self) -> bool {
        self.spec.state_dim == other.spec.state_dim
            && self.spec.action_dim == other.spec.action_dim
            && self.spec.goal_dim == other.spec.goal_dim
            && self.collection_seed == other.collection_seed
            && self.episodes == other.episodes
    }
}

impl OfflineDataset {
    pub fn new(spec: GaMdpSpec, collection_seed: u64, episodes: Vec<Episode<f32>>) -> Result<Self> {
        for ep in &episodes {
            ep.validate(&spec)?;
        }
        let mut ds = Self {
            spec,
            collection_seed,
            episodes,
            horizon: 0,
            tail: WindowTail::Pad,
            window_index: vec![],
        };
        ds.index_windows(1, WindowTail::Pad);
        Ok(ds)
    }

    /// Rebuilds the window index for horizon `h`.
    pub fn index_windows(&mut self, h: usize, tail: WindowTail) {
        self.horizon = h.max(1);
        self.tail = tail;
        self.window_index.clear();
        for (e, ep) in self.episodes.iter().enumerate() {
            let last = ep.len(&self.spec) - 1;
            let end = match tail {
                WindowTail::Pad => last - 1,
                WindowTail::Drop => last.saturating_sub(self.horizon),
            };
            self.window_index.extend((0..=end).map(|t| (e as u32, t as u32)));
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn window_index(&self) -> &[(u32, u32)] {
        &self.window_index
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.len(&self.spec)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            version: VERSION,
            state_dim: self.spec.state_dim as u32,
            action_dim: self.spec.action_dim as u32,
            goal_dim: self.spec.goal_dim as u32,
            n_episodes: self.episodes.len() as u32,
            collection_seed: self.collection_seed,
        }
    }

    /// Window starting at step `t` of episode `e`, terminal-padded past the end.
    pub fn window(&self, e: usize, t: usize) -> SubTrajectory<f32> {
        let (sd, ad) = (self.spec.state_dim, self.spec.action_dim);
        let ep = &self.episodes[e];
        let last = ep.len(&self.spec) - 1;
        let mut states = Vec::with_capacity((self.horizon + 1) * sd);
        let mut actions = Vec::with_capacity((self.horizon + 1) * ad);
        for j in 0..=self.horizon {
            let i = (t + j).min(last);
            states.extend_from_slice(ep.state(&self.spec, i));
            actions.extend_from_slice(ep.action(&self.spec, i));
        }
        SubTrajectory {
            states,
            actions,
            state_dim: sd,
            action_dim: ad,
            start_step: t,
        }
    }

    /// Uniform draw over the window index.
    pub fn sample_window(&self, rng: &mut Rng) -> Result<(SubTrajectory<f32>, usize, usize)> {
        if self.window_index.is_empty() {
            return Err(Error::InputDomain("dataset has no windows".into()));
        }
        let (e, t) = self.window_index[rng.random_range(0..self.window_index.len())];
        Ok((self.window(e as usize, t as usize), e as usize, t as usize))
    }

    /// Number of states in the whole store, for uniform state sampling.
    pub fn state_count(&self) -> usize {
        self.total_steps()
    }

    /// Uniform random state of the whole dataset.
    pub fn sample_state(&self, rng: &mut Rng) -> Result<&[f32]> {
        let n = self.total_steps();
        if n == 0 {
            return Err(Error::InputDomain("dataset is empty".into()));
        }
        let mut i = rng.random_range(0..n);
        for ep in &self.episodes {
            let l = ep.len(&self.spec);
            if i < l {
                return Ok(ep.state(&self.spec, i));
            }
            i -= l;
        }
        unreachable!("index within total_steps")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = self.header();
        let mut out = Vec::with_capacity(32 + self.total_steps() * 4 * (h.state_dim + h.action_dim) as usize);
        out.extend_from_slice(MAGIC);
        for v in [h.version, h.state_dim, h.action_dim, h.goal_dim, h.n_episodes] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&h.collection_seed.to_le_bytes());
        for ep in &self.episodes {
            out.extend_from_slice(&(ep.len(&self.spec) as u32).to_le_bytes());
            out.push(u8::from(ep.terminated_at_goal));
            push_f32s(&mut out, &ep.desired_goal);
            push_f32s(&mut out, &ep.states);
            push_f32s(&mut out, &ep.actions);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        if r.bytes(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic, expected SSD1".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported version {version}"),
            });
        }
        let dims_at = r.offset();
        let (sd, ad, gd) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n_episodes = r.u32()?;
        let collection_seed = r.u64()?;
        let spec =
            GaMdpSpec::new(sd, ad, gd, DEFAULT_GAMMA, DEFAULT_TOLERANCE, DEFAULT_MAX_EPISODE_STEPS).map_err(|e| {
                Error::Format {
                    offset: dims_at,
                    msg: e.to_string(),
                }
            })?;
        let mut episodes = Vec::with_capacity(n_episodes.min(1 << 20) as usize);
        for _ in 0..n_episodes {
            let at = r.offset();
            let len = r.u32()? as usize;
            if len < 2 {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("episode length {len} < 2"),
                });
            }
            let flag = r.u8()?;
            if flag > 1 {
                return Err(r.err(format!("terminated flag {flag} not boolean")));
            }
            let desired_goal = r.f32s(gd)?;
            let states = r.f32s(len * sd)?;
            let actions = r.f32s(len * ad)?;
            episodes.push(Episode {
                states,
                actions,
                desired_goal,
                terminated_at_goal: flag == 1,
            });
        }
        if !r.at_end() {
            return Err(r.err("trailing bytes after last episode"));
        }
        let mut ds = Self {
            spec,
            collection_seed,
            episodes,
            horizon: 0,
            tail: WindowTail::Pad,
            window_index: vec![],
        };
        ds.index_windows(1, WindowTail::Pad);
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// PAD: overwrite entries `k+1..=h` with entry `k`, for states and actions alike.
pub fn pad_successful<T: Scalar>(x: &SubTrajectory<T>, k: usize) -> Result<SubTrajectory<T>> {
    let h = x.horizon();
    if k > h {
        return Err(Error::OutOfRange(format!("pad index {k} exceeds horizon {h}")));
    }
    let mut out = x.clone();
    let (sd, ad) = (x.state_dim, x.action_dim);
    for j in k + 1..=h {
        out.states.copy_within(k * sd..(k + 1) * sd, j * sd);
        out.actions.copy_within(k * ad..(k + 1) * ad, j * ad);
    }
    Ok(out)
}

/// Knobs for scripted data collection.
#[derive(Clone, Debug)]
pub struct CollectConfig {
    pub physics: PhysicsParams,
    pub action_noise: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            physics: PhysicsParams::default(),
            action_noise: 0.1,
        }
    }
}

struct Recorder<'a> {
    layout: &'a MazeLayout,
    spec: &'a GaMdpSpec,
    cfg: &'a CollectConfig,
}

impl Recorder<'_> {
    /// Runs the waypoint follower from `start` toward `goal`, recording at most
    /// `budget` transitions. Returns the episode and the state it ended in.
    fn run(&self, start: EnvState, goal: Cell, budget: usize, rng: &mut Rng) -> Result<(Episode<f32>, EnvState)> {
        let g = goal.center();
        let goal32 = [g[0] as f32, g[1] as f32];
        let mut follower = WaypointFollower::new(self.layout, start.position, goal)?;
        let mut s = start;
        let mut states = s.to_vec::<f32>();
        let mut actions: Vec<f32> = Vec::new();
        let cap = self.spec.max_episode_steps.min(budget);
        let mut reached = false;
        for t in 0..=cap {
            let s32 = s.to_vec::<f32>();
            if goal_reached(&s32, &goal32, self.spec)? {
                reached = true;
                let a = hold_action(&s, g, &self.cfg.physics);
                actions.extend(a.iter().map(|v| *v as f32));
                break;
            }
            let a = follower.action(self.layout, &s)?;
            if t == cap {
                actions.extend(a.iter().map(|v| *v as f32));
                break;
            }
            let a = perturb(a, self.cfg.action_noise, rng);
            let a = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
            actions.extend(a.iter().map(|v| *v as f32));
            s = step(&s, a, &self.cfg.physics, self.layout);
            states.extend(s.to_vec::<f32>());
        }
        // Stored states are f32; recompute the flag on what was stored.
        let terminated_at_goal = reached && goal_reached(&states[states.len() - 4..], &goal32, self.spec)?;
        let ep = Episode {
            states,
            actions,
            desired_goal: goal32.to_vec(),
            terminated_at_goal,
        };
        Ok((ep, s))
    }
}

fn jittered(cell: Cell, rng: &mut Rng) -> EnvState {
    let c = cell.center();
    let j = crate::maze::START_JITTER;
    EnvState::at_rest([c[0] + rng.random_range(-j..j), c[1] + rng.random_range(-j..j)])
}

/// Continuous scripted collection: a goal cell is sampled, the controller
/// drives toward it, and on achievement (or the step cap) a new goal is
/// sampled from wherever the mass is. Deterministic in `seed`.
pub fn collect(
    layout: &MazeLayout,
    spec: &GaMdpSpec,
    cfg: &CollectConfig,
    n_transitions: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    let free = layout.free_cells();
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let rec = Recorder { layout, spec, cfg };
    let mut s = jittered(free[rng.random_range(0..free.len())], &mut rng);
    let mut episodes = Vec::new();
    let mut remaining = n_transitions;
    while remaining > 0 {
        let here = layout.cell_of(s.position).expect("inside grid");
        let goal = loop {
            let c = free[rng.random_range(0..free.len())];
            if c != here || free.len() == 1 {
                break c;
            }
        };
        let (ep, end) = rec.run(s, goal, remaining, &mut rng)?;
        let transitions = ep.len(spec) - 1;
        if transitions == 0 {
            // Started inside the goal ball; resample without recording.
            s = end;
            continue;
        }
        remaining -= transitions.min(remaining);
        episodes.push(ep);
        s = end;
    }
    OfflineDataset::new(spec.clone(), seed, episodes)
}

/// Collection restricted to fixed routes: every episode resets (with jitter)
/// at a route's start cell and drives to its goal cell. Routes are cycled in order.
pub fn collect_routes(
    layout: &MazeLayout,
    spec: &GaMdpSpec,
    cfg: &CollectConfig,
    routes: &[(Cell, Cell)],
    n_transitions: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if routes.is_empty() || routes.iter().any(|(a, b)| a == b) {
        return Err(Error::InputDomain(
            "routes must be non-empty and connect distinct cells".into(),
        ));
    }
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let rec = Recorder { layout, spec, cfg };
    let mut episodes = Vec::new();
    let mut remaining = n_transitions;
    let mut i = 0;
    while remaining > 0 {
        let (from, to) = routes[i % routes.len()];
        i += 1;
        let (ep, _) = rec.run(jittered(from, &mut rng), to, remaining, &mut rng)?;
        let transitions = ep.len(spec) - 1;
        if transitions == 0 {
            continue;
        }
        remaining -= transitions.min(remaining);
        episodes.push(ep);
    }
    OfflineDataset::new(spec.clone(), seed, episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GaMdpSpec {
        GaMdpSpec::maze(0.98, 0.5, 100).unwrap()
    }

    fn window(h: usize) -> SubTrajectory<f64> {
        let states: Vec<f64> = (0..(h + 1) * 4).map(|v| v as f64).collect();
        let actions: Vec<f64> = (0..(h + 1) * 2).map(|v| -(v as f64)).collect();
        SubTrajectory::new(states, actions, 4, 2, 0).unwrap()
    }

    #[test]
    fn pad_cases() {
        let x = window(4);
        assert_eq!(pad_successful(&x, 4).unwrap(), x);
        let p = pad_successful(&x, 2).unwrap();
        for j in 0..=2 {
            assert_eq!(p.state(j), x.state(j));
            assert_eq!(p.action(j), x.action(j));
        }
        for j in 3..=4 {
            assert_eq!(p.state(j), x.state(2));
            assert_eq!(p.action(j), x.action(2));
        }
        let z = pad_successful(&x, 0).unwrap();
        assert!((0..=4).all(|j| z.state(j) == x.state(0) && z.action(j) == x.action(0)));
        assert!(matches!(pad_successful(&x, 5), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn single_short_episode_has_one_window() {
        let s = spec();
        let ep = Episode {
            states: (0..12).map(|v| v as f32).collect(),
            actions: vec![0.0; 6],
            desired_goal: vec![100.0, 100.0],
            terminated_at_goal: false,
        };
        let mut ds = OfflineDataset::new(s, 0, vec![ep]).unwrap();
        ds.index_windows(2, WindowTail::Drop);
        assert_eq!(ds.window_index(), &[(0, 0)]);
        let (w, e, t) = ds.sample_window(&mut rng::stream(0, "t")).unwrap();
        assert_eq!((e, t), (0, 0));
        assert_eq!(w.state(0), &[0.0, 1.0, 2.0, 3.0]);
        ds.index_windows(4, WindowTail::Drop);
        let w = ds.window(0, 0);
        // padded past the end with the terminal state
        assert_eq!(w.state(4), &[8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn pad_tail_indexes_every_transition() {
        let s = spec();
        let ep = Episode {
            states: vec![0.0; 40],
            actions: vec![0.0; 20],
            desired_goal: vec![9.0, 9.0],
            terminated_at_goal: false,
        };
        let mut ds = OfflineDataset::new(s, 0, vec![ep.clone(), ep]).unwrap();
        ds.index_windows(3, WindowTail::Pad);
        assert_eq!(ds.window_index().len(), 18);
        ds.index_windows(3, WindowTail::Drop);
        assert_eq!(ds.window_index().len(), 14);
    }

    #[test]
    fn corrupted_magic_reports_offset_zero() {
        let ds = OfflineDataset::new(spec(), 1, vec![]).unwrap();
        let mut bytes = ds.to_bytes();
        bytes[0] = b'X';
        match OfflineDataset::from_bytes(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
        let mut bytes = ds.to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            OfflineDataset::from_bytes(&bytes),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn truncation_is_a_format_error() {
        let l = MazeLayout::builtin("umaze").unwrap();
        let ds = collect(&l, &spec(), &CollectConfig::default(), 200, 3).unwrap();
        let bytes = ds.to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(OfflineDataset::from_bytes(cut), Err(Error::Format { .. })));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = OfflineDataset::new(spec(), 5, vec![]).unwrap();
        assert_eq!(OfflineDataset::from_bytes(&ds.to_bytes()).unwrap(), ds);
    }

    #[test]
    fn collection_is_deterministic_and_successes_are_valid() {
        let l = MazeLayout::builtin("umaze").unwrap();
        let s = spec();
        let a = collect(&l, &s, &CollectConfig::default(), 5000, 7).unwrap();
        let b = collect(&l, &s, &CollectConfig::default(), 5000, 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let transitions: usize = a.episodes.iter().map(|e| e.len(&s) - 1).sum();
        assert_eq!(transitions, 5000);
        assert!(a.episodes.iter().filter(|e| e.terminated_at_goal).count() > 50);
        for ep in &a.episodes {
            ep.validate(&s).unwrap();
        }
    }

    #[test]
    fn sampled_window_starts_at_source_state() {
        let l = MazeLayout::builtin("medium").unwrap();
        let mut ds = collect(&l, &spec(), &CollectConfig::default(), 3000, 2).unwrap();
        ds.index_windows(8, WindowTail::Pad);
        let mut r = rng::stream(1, "w");
        for _ in 0..200 {
            let (w, e, t) = ds.sample_window(&mut r).unwrap();
            let ep = &ds.episodes[e];
            let last = ep.len(&ds.spec) - 1;
            for j in 0..=8 {
                if t + j <= last {
                    assert_eq!(w.state(j), ep.state(&ds.spec, t + j));
                } else {
                    assert_eq!(w.state(j), ep.state(&ds.spec, last));
                }
            }
        }
    }
}
