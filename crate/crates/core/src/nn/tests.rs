use super::gradcheck::probe;
use super::*;
use crate::rng::{stream, Rng, STREAM_INIT};

fn rng() -> Rng {
    stream(11, STREAM_INIT)
}

fn random_input(rows: usize, cols: usize, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, probe(rows * cols, rng))
}

#[test]
fn dense_identity_weights_pass_input_through() {
    let mut reg = ParamRegistry::<f64>::new();
    let d = Dense::new(&mut reg, "d", 3, 3, &mut rng()).unwrap();
    let eye: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
    reg.value_mut(d.w).data_mut().copy_from_slice(&eye);
    let x = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0]);
    let mut g = Graph::new(&reg);
    let xi = g.input(x.clone());
    let y = d.forward(&mut g, xi);
    assert_eq!(g.value(y).data(), x.data());
}

#[test]
fn layer_norm_rows_have_zero_mean_and_constant_rows_map_to_bias() {
    let mut reg = ParamRegistry::<f64>::new();
    let ln = LayerNorm::new(&mut reg, "ln", 4).unwrap();
    let mut g = Graph::new(&reg);
    let x = g.input(Tensor::from_vec(2, 4, vec![1.0, 2.0, 3.0, 10.0, 5.0, 5.0, 5.0, 5.0]));
    let y = ln.forward(&mut g, x);
    let out = g.value(y);
    let mean: f64 = out.row(0).iter().sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12);
    assert!(out.row(1).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn single_token_attention_returns_value_projection() {
    let mut g_rng = rng();
    let reg = ParamRegistry::<f64>::new();
    let mut g = Graph::new(&reg);
    let qkv = random_input(2, 12, &mut g_rng);
    let node = g.input(qkv.clone());
    let out = g.attention(node, 2, 1, 2);
    for r in 0..2 {
        assert_eq!(g.value(out).row(r), &qkv.row(r)[8..12]);
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    let mut r = rng();
    let mut reg = ParamRegistry::<f64>::new();
    let mha = MultiHeadAttention::new(&mut reg, "a", 8, 2, &mut r).unwrap();
    let x = random_input(4, 8, &mut r);
    let perm = [2usize, 0, 3, 1];
    let mut xp = Vec::new();
    for &p in &perm {
        xp.extend_from_slice(x.row(p));
    }
    let mut g = Graph::new(&reg);
    let a = g.input(x);
    let b = g.input(Tensor::from_vec(4, 8, xp));
    let ya = mha.forward(&mut g, a, 1, 4);
    let yb = mha.forward(&mut g, b, 1, 4);
    for (i, &p) in perm.iter().enumerate() {
        for (u, v) in g.value(yb).row(i).iter().zip(g.value(ya).row(p)) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let build = || {
        let mut r = rng();
        let mut reg = ParamRegistry::<f32>::new();
        let blk = TransformerBlock::new(&mut reg, "b", 8, 2, &mut r).unwrap();
        (reg, blk)
    };
    let (reg, blk) = build();
    let (reg2, blk2) = build();
    let x: Vec<f32> = (0..24).map(|i| (i as f32 * 0.37).sin()).collect();
    let mut g = Graph::new(&reg);
    let xi = g.input(Tensor::from_vec(3, 8, x.clone()));
    let y = blk.forward(&mut g, xi, 1, 3);
    let mut g2 = Graph::new(&reg2);
    let xi2 = g2.input(Tensor::from_vec(3, 8, x));
    let y2 = blk2.forward(&mut g2, xi2, 1, 3);
    assert_eq!(g.value(y).data(), g2.value(y2).data());
}

#[test]
fn input_gradients_are_reported() {
    let reg = ParamRegistry::<f64>::new();
    let mut g = Graph::new(&reg);
    let x = g.input_grad(Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
    let y = g.dot_const(x, &[4.0, 5.0, 6.0]);
    let grads = g.backward(y);
    assert_eq!(grads.node(x).unwrap().data(), &[4.0, 5.0, 6.0]);
}
