use super::tabular::{exhaustive_windows, tabular_oracle, GridMdp, ACTIONS};
use super::*;
use crate::nn::{Adam, AdamConfig};
use crate::rng::{stream, STREAM_DATA, STREAM_INIT};
use rand::Rng as _;

#[test]
fn chaining_target_examples() {
    assert!((chaining_target(Some(3), 0.98, 0.0) - 0.9604).abs() < 1e-12);
    assert_eq!(chaining_target(Some(1), 0.98, 0.3), 1.0);
    assert!((chaining_target(None, 0.98, 0.5) - 0.49).abs() < 1e-12);
    assert_eq!(chaining_target(None, 0.98, 7.0), 1.0);
}

#[test]
fn naive_max_target_examples() {
    assert_eq!(naive_max_target(None, 0.98, &[0.4]), chaining_target(None, 0.98, 0.4));
    assert!((naive_max_target(None, 0.9, &[0.5; 6]) - 0.45).abs() < 1e-12);
    assert!((naive_max_target(None, 0.9, &[0.1, 1.0]) - 0.81).abs() < 1e-12);
    assert_eq!(naive_max_target(Some(2), 0.9, &[1.0, 1.0]), 0.9);
}

#[test]
fn am_one_step_target_examples() {
    assert_eq!(am_one_step_target(true, 0.98, 0.0), 1.0);
    assert_eq!(am_one_step_target(false, 0.98, 0.0), 0.0);
    assert!((am_one_step_target(false, 0.98, 1.0) - 0.98).abs() < 1e-12);
}

#[test]
fn target_parsing_round_trips() {
    for m in [TargetMode::MultiStep, TargetMode::NaiveMax, TargetMode::AmOneStep] {
        assert_eq!(m.to_string().parse::<TargetMode>().unwrap(), m);
    }
    for a in [ActionSource::DiffusionFast, ActionSource::DatasetNextAction] {
        assert_eq!(a.to_string().parse::<ActionSource>().unwrap(), a);
    }
    assert!("max".parse::<TargetMode>().is_err());
}

fn random_batch(n: usize, rng: &mut Rng) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut f = |k: usize| (0..k).map(|_| rng.random_range(-5.0f32..5.0)).collect::<Vec<_>>();
    (f(n * 4), f(n * 2), f(n * 2))
}

#[test]
fn q_values_are_bounded_centered_at_init_and_batch_consistent() {
    let mut rng = stream(1, STREAM_INIT);
    let net = CriticNet::<f32>::new(4, 2, 2, &DEFAULT_HIDDEN, &mut rng).unwrap();
    let n = 10_000;
    let (s, a, g) = random_batch(n, &mut rng);
    let q = net.q_values(&s, &a, &g).unwrap();
    assert!(q.iter().all(|v| (0.0..=1.0).contains(v)));
    let mean = q.iter().sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 0.2, "{mean}");
    for i in (0..n).step_by(997) {
        let single = net
            .q_value(&s[i * 4..i * 4 + 4], &a[i * 2..i * 2 + 2], &g[i * 2..i * 2 + 2])
            .unwrap();
        assert_eq!(single, q[i]);
    }
}

#[test]
fn td_loss_examples_and_descent() {
    let mut rng = stream(2, STREAM_INIT);
    let mut net = CriticNet::<f64>::new(4, 2, 2, &[16, 16], &mut rng).unwrap();
    let out = net.mlp.layers.last().unwrap().clone();
    // Zero the last layer and push its bias far negative: Q ≈ 0.
    net.params.value_mut(out.w).fill(0.0);
    net.params.value_mut(out.b).fill(-40.0);
    let x = net.inputs(&[0.0; 4], &[0.0; 2], &[0.0; 2]).unwrap();
    let mut g = Graph::new(&net.params);
    let l = net.td_loss(&mut g, x.clone(), &[1.0]);
    assert!((g.value(l).data()[0] - 0.5).abs() < 1e-12);
    drop(g);
    let q = net.q_values(&[0.0; 4], &[0.0; 2], &[0.0; 2]).unwrap();
    let mut g = Graph::new(&net.params);
    let l = net.td_loss(&mut g, x, &q);
    assert_eq!(g.value(l).data()[0], 0.0);
    drop(g);

    let mut net = CriticNet::<f64>::new(4, 2, 2, &[16, 16], &mut rng).unwrap();
    let (s, a, gl) = random_batch(32, &mut rng);
    let x = net.inputs(&s, &a, &gl).unwrap();
    let y: Vec<f64> = (0..32).map(|_| rng.random::<f64>()).collect();
    let mut opt = Adam::new(
        &net.params,
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
    );
    let mut last = f64::INFINITY;
    for _ in 0..100 {
        let grads = {
            let mut g = Graph::new(&net.params);
            let l = net.td_loss(&mut g, x.clone(), &y);
            let v = g.value(l).data()[0];
            assert!(v <= last + 1e-12, "loss rose from {last} to {v}");
            last = v;
            g.backward(l)
        };
        net.params.accumulate(&grads);
        opt.step(&mut net.params);
    }
}

#[test]
fn achieved_branch_ignores_the_bootstrap() {
    for q in [0.0, 0.3, 0.99] {
        assert_eq!(chaining_target(Some(4), 0.98, q), 0.98f64.powi(3));
    }
}

fn corridor_features(mdp: &GridMdp, s: usize, a: usize, g: usize) -> ([f32; 4], [f32; 2], [f32; 2]) {
    let (c, gc) = (mdp.cells[s].col as f32, mdp.cells[g].col as f32);
    let (dr, dc) = ACTIONS[a];
    ([c, 0.0, 0.0, 0.0], [dc as f32, dr as f32], [gc, 0.0])
}

#[test]
fn trained_critic_preserves_corridor_ordering() {
    let mdp = GridMdp::open(1, 8).unwrap();
    let gamma = 0.9;
    let oracle = tabular_oracle(&mdp, gamma);
    let windows = exhaustive_windows(&mdp, 3);
    let mut rng = stream(4, STREAM_INIT);
    let mut net = CriticNet::<f32>::new(4, 2, 2, &[64, 64], &mut rng).unwrap();
    net.input_norm = Some(crate::diffusion::Normalizer {
        lo: vec![0.0, -1.0, -1.0, -1.0, -1.0, -1.0],
        hi: vec![7.0, 1.0, 1.0, 1.0, 1.0, 1.0],
    });
    let mut lagged = net.clone();
    let mut opt = Adam::new(
        &net.params,
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
    );
    let mut data = stream(4, STREAM_DATA);
    let n = mdp.n_states();
    for _ in 0..3000 {
        let (mut s, mut a, mut gs, mut ys) = (vec![], vec![], vec![], vec![]);
        let mut boot = (vec![], vec![], vec![]);
        let mut picks = vec![];
        for _ in 0..64 {
            let w = &windows[data.random_range(0..windows.len())];
            let goal = if data.random_bool(0.5) {
                w.states[data.random_range(1..=3)]
            } else {
                data.random_range(0..n)
            };
            let achieved = (1..=3).find(|k| w.states[*k] == goal);
            let (fs, fa, fg) = corridor_features(&mdp, w.states[0], w.first_action, goal);
            s.extend(fs);
            a.extend(fa);
            gs.extend(fg);
            for act in 0..4 {
                let (bs, ba, bg) = corridor_features(&mdp, w.states[1], act, goal);
                boot.0.extend(bs);
                boot.1.extend(ba);
                boot.2.extend(bg);
            }
            picks.push(achieved);
        }
        let qb = lagged.q_values(&boot.0, &boot.1, &boot.2).unwrap();
        for (i, achieved) in picks.iter().enumerate() {
            let best = qb[i * 4..i * 4 + 4].iter().copied().fold(0.0, f64::max);
            ys.push(chaining_target(*achieved, gamma, best));
        }
        let x = net.inputs(&s, &a, &gs).unwrap();
        let grads = {
            let mut g = Graph::new(&net.params);
            let l = net.td_loss(&mut g, x, &ys);
            g.backward(l)
        };
        net.params.accumulate(&grads);
        opt.step(&mut net.params);
        lagged.params.ema_update(&net.params, 0.05);
    }
    let (mut ok, mut total) = (0usize, 0usize);
    for g in 0..n {
        let mut entries = vec![];
        for s in 0..n {
            for a in [2usize, 3] {
                let (fs, fa, fg) = corridor_features(&mdp, s, a, g);
                entries.push((oracle.get(s, a, g), net.q_value(&fs, &fa, &fg).unwrap()));
            }
        }
        for i in 0..entries.len() {
            for j in 0..entries.len() {
                if entries[i].0 > entries[j].0 + 1e-9 {
                    total += 1;
                    if entries[i].1 > entries[j].1 {
                        ok += 1;
                    }
                }
            }
        }
    }
    let frac = ok as f64 / total as f64;
    assert!(frac >= 0.95, "ordering preserved on {frac:.3} of {total} pairs");
}
