use super::*;
use crate::rng::{stream, STREAM_INIT, STREAM_NOISE};

fn toy_config() -> UnetConfig {
    UnetConfig {
        token_dim: 16,
        heads: 2,
        levels: 2,
        ..UnetConfig::new(4, 4, 2, 2)
    }
}

fn toy_norm() -> Normalizer {
    Normalizer {
        lo: vec![0.0, 0.0, -2.0, -2.0, -1.0, -1.0],
        hi: vec![5.0, 5.0, 2.0, 2.0, 1.0, 1.0],
    }
}

#[test]
fn padded_token_count_is_a_multiple_of_the_resampling_factor() {
    let c = UnetConfig::new(16, 4, 2, 2);
    assert_eq!(c.tokens(), 17);
    assert_eq!(c.padded_tokens(), 20);
    assert_eq!(toy_config().padded_tokens(), 8);
}

#[test]
fn output_shape_matches_input_and_value_prompt_matters() {
    let mut rng = stream(3, STREAM_INIT);
    let net = CondPromptUnet::<f32>::new(toy_config(), &mut rng).unwrap();
    let x = Tensor::from_vec(10, 6, gaussian(60, &mut rng));
    let goals = Tensor::from_vec(2, 2, vec![0.1, 0.2, -0.3, 0.4]);
    let a = net.predict(x.clone(), &[3, 7], &goals, &[0.2, 0.9]);
    assert_eq!(a.shape(), &[10, 6]);
    let b = net.predict(x, &[3, 7], &goals, &[0.8, 0.1]);
    let diff: f32 = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).powi(2)).sum();
    assert!(diff > 0.0);
}

#[test]
fn zero_output_network_loss_is_mean_squared_noise() {
    let mut rng = stream(9, STREAM_INIT);
    let mut net = CondPromptUnet::<f64>::new(toy_config(), &mut rng).unwrap();
    for name in ["head.w", "head.b"] {
        let id = net.params.id(name).unwrap();
        net.params.value_mut(id).fill(0.0);
    }
    let sched = NoiseSchedule::cosine(50).unwrap();
    let batch = 400;
    let x0 = Tensor::from_vec(batch * 5, 6, vec![0.25; batch * 30]);
    let goals = Tensor::zeros(&[batch, 2]);
    let values = vec![0.5; batch];
    let mut g = net.graph();
    let loss = ddpm_loss(&net, &mut g, &sched, &x0, &goals, &values, 1.0, &mut rng);
    let l = g.value(loss).data()[0];
    assert!((l - 1.0).abs() < 0.05, "{l}");
}

#[test]
fn reverse_sample_inpaints_is_deterministic_and_bounded() {
    let mut rng = stream(4, STREAM_INIT);
    let net = CondPromptUnet::<f32>::new(toy_config(), &mut rng).unwrap();
    let sched = NoiseSchedule::cosine(50).unwrap();
    let norm = toy_norm();
    let s0 = vec![1.2345, 3.21, 0.5, -0.25];
    let conds: Vec<Condition> = (0..1000)
        .map(|i| Condition {
            goal: vec![4.0, 1.0],
            value: (i % 10) as f32 / 10.0,
            inpaint_state: (i % 2 == 0).then(|| s0.clone()),
        })
        .collect();
    let a = reverse_sample(&net, &sched, &norm, &conds, Some(5), &mut stream(1, STREAM_NOISE)).unwrap();
    for (i, x) in a.iter().enumerate() {
        if i % 2 == 0 {
            assert_eq!(x.state(0), &s0[..]);
        }
        for row in x.to_joint().chunks(6) {
            for (j, v) in row.iter().enumerate() {
                assert!(
                    *v >= norm.lo[j] - 1e-5 && *v <= norm.hi[j] + 1e-5,
                    "{v} outside column {j}"
                );
            }
        }
    }
    let few = &conds[..3];
    let b1 = reverse_sample(&net, &sched, &norm, few, None, &mut stream(2, STREAM_NOISE)).unwrap();
    let b2 = reverse_sample(&net, &sched, &norm, few, None, &mut stream(2, STREAM_NOISE)).unwrap();
    assert_eq!(b1, b2);
}

#[test]
fn normalizer_round_trips_and_survives_checkpoint_tensors() {
    let rows: Vec<Vec<f32>> = vec![vec![0.0, 1.0, 3.0], vec![2.0, 1.0, -1.0]];
    let n = Normalizer::fit(rows.iter().map(|r| r.as_slice()), 3).unwrap();
    assert_eq!(n.normalize(&rows[0]), vec![-1.0, 0.0, 1.0]);
    let back = n.denormalize(&n.normalize(&rows[1]));
    for (a, b) in back.iter().zip(&rows[1]) {
        assert!((a - b).abs() < 1e-6);
    }
    assert_eq!(Normalizer::from_tensors(&n.to_tensors()).unwrap(), n);
}
