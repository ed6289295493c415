//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::Rng as _;

use super::graph::{Graph, NodeId};
use super::params::ParamRegistry;
use crate::rng::Rng;

pub const FD_STEP: f64 = 1e-3;
pub const MAX_COORDS: usize = 200;

/// Outcome of one check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub coords: usize,
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares analytic parameter gradients of the scalar built by `f` against
/// central differences on up to [`MAX_COORDS`] randomly chosen parameter
/// coordinates. `floor` bounds the denominator away from zero.
pub fn grad_check<F>(reg: &mut ParamRegistry<f64>, f: F, floor: f64, rng: &mut Rng) -> GradCheck
where
    F: Fn(&mut Graph<'_, f64>) -> NodeId,
{
    let analytic = {
        let mut g = Graph::new(reg);
        let loss = f(&mut g);
        g.backward(loss).params
    };
    let mut coords = Vec::new();
    for id in reg.ids() {
        for j in 0..reg.value(id).len() {
            coords.push((id, j));
        }
    }
    let picked: Vec<usize> = if coords.len() > MAX_COORDS {
        sample(rng, coords.len(), MAX_COORDS).into_vec()
    } else {
        (0..coords.len()).collect()
    };
    let eval = |reg: &ParamRegistry<f64>| {
        let mut g = Graph::new(reg);
        let loss = f(&mut g);
        g.value(loss).data()[0]
    };
    let mut worst: f64 = 0.0;
    for &c in &picked {
        let (id, j) = coords[c];
        let orig = reg.value(id).data()[j];
        reg.value_mut(id).data_mut()[j] = orig + FD_STEP;
        let plus = eval(reg);
        reg.value_mut(id).data_mut()[j] = orig - FD_STEP;
        let minus = eval(reg);
        reg.value_mut(id).data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[id.0].as_ref().map_or(0.0, |t| t.data()[j]);
        worst = worst.max(rel_err(a, numeric, floor));
    }
    GradCheck {
        max_rel_err: worst,
        coords: picked.len(),
    }
}

/// Random probe vector for turning a tensor output into a scalar.
pub fn probe(len: usize, rng: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}
