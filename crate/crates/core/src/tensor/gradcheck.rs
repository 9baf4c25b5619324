//! Central finite-difference verification of the engine's gradients.
//!
//! Checks run in `f64`. Relative error is measured as
//! `|analytic - fd| / max(|analytic|, |fd|, 0.01)`: the floor makes the
//! comparison absolute for numerically irrelevant components while staying
//! a true relative error at scale.
//!
//! ReLU is only piecewise smooth, so kink handling matters: per-op checks
//! use inputs bounded away from zero, and whole-model checks (built with
//! standalone ReLU nodes) verify via [`Graph::relu_input_margin`] that no
//! preactivation sits within the probe window, reseeding deterministically
//! until the margin holds.

use super::{Graph, Result, Tensor, Value};
use crate::tensor::uniform_tensor;

/// Probe step for per-operation checks.
pub const OP_FD_STEP: f64 = 1e-3;
/// Probe step for whole-model checks (deep ReLU stacks need a window
/// narrow enough that kink margins are satisfiable).
pub const MODEL_FD_STEP: f64 = 1e-5;
/// Maximum admissible relative error.
pub const GRAD_TOL: f64 = 1e-4;
/// Required ReLU preactivation margin, in units of the probe step.
pub const RELU_MARGIN_FACTOR: f64 = 20.0;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOL
    }
}

fn rel_err(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(0.01)
}

/// Compare analytic gradients of `build`'s scalar loss against central
/// finite differences over every element of every input tensor.
pub fn check_gradients<F>(name: &str, inputs: &[Tensor<f64>], h: f64, build: F) -> Result<CheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Value<'g, f64>]) -> Result<Value<'g, f64>>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let leaves: Vec<_> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        Ok(build(&g, &leaves)?.to_tensor().item())
    };

    // analytic pass
    let g = Graph::new();
    let leaves: Vec<_> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_grad()))
        .collect();
    let loss = build(&g, &leaves)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = leaves.iter().map(|&v| grads.tensor(v)).collect();

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut coords = 0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            max_rel = max_rel.max(rel_err(analytic[i].data()[j], fd));
            coords += 1;
        }
    }
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_err: max_rel,
        coords,
    })
}

fn rng(tag: u64) -> rand_chacha::ChaCha8Rng {
    crate::seed::stream(0x6664_6366, tag, 0, 0)
}

/// Random tensor bounded away from zero: |v| in [lo, hi].
fn offset_tensor(shape: &[usize], lo: f64, hi: f64, tag: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut r = rng(tag);
    Tensor::from_fn(shape, |_| {
        let m: f64 = r.gen_range(lo..hi);
        if r.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Reduce a non-scalar output to a scalar via a fixed random probe:
/// `sum(y * r)` exercises every output coordinate with distinct weights.
fn probe_loss<'g>(g: &'g Graph<f64>, y: Value<'g, f64>, tag: u64) -> Result<Value<'g, f64>> {
    let shape = y.shape();
    let r = g.leaf(uniform_tensor::<f64, _>(&shape, 1.0, &mut rng(tag)));
    y.mul(r)?.sum()
}

/// Finite-difference reports for every differentiable operation.
pub fn op_suite() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let h = OP_FD_STEP;

    let mut r = rng(1);
    let x = uniform_tensor::<f64, _>(&[2, 3, 6, 7], 1.0, &mut r);
    let w = uniform_tensor::<f64, _>(&[4, 3, 3, 3], 0.7, &mut r);
    let b = uniform_tensor::<f64, _>(&[4], 0.5, &mut r);
    out.push(check_gradients("conv2d stride2 pad1", &[x, w, b], h, |g, v| {
        probe_loss(g, v[0].conv2d(v[1], Some(v[2]), 2, 1, false)?, 11)
    })?);

    let mut r = rng(2);
    let x = uniform_tensor::<f64, _>(&[1, 2, 5, 5], 1.0, &mut r);
    let w = uniform_tensor::<f64, _>(&[3, 2, 2, 2], 0.7, &mut r);
    out.push(check_gradients("conv2d stride1 pad0", &[x, w], h, |g, v| {
        probe_loss(g, v[0].conv2d(v[1], None, 1, 0, false)?, 12)
    })?);

    // fused conv+relu on a margin-safe construction: strong bias keeps
    // every preactivation away from the kink.
    let x = offset_tensor(&[1, 2, 4, 4], 0.2, 0.8, 3);
    let w = offset_tensor(&[3, 2, 3, 3], 0.2, 0.5, 4);
    let b = Tensor::new(&[3], vec![6.0, -6.0, 6.5])?;
    out.push(check_gradients("conv2d fused relu", &[x, w, b], h, |g, v| {
        probe_loss(g, v[0].conv2d(v[1], Some(v[2]), 1, 1, true)?, 13)
    })?);

    // sparse constant input: exercises the scatter path for the kernel
    // gradient (the input is a non-differentiated leaf)
    let sparse_x = Tensor::from_fn(&[1, 8, 12, 12], |i| if i % 131 == 0 { 0.8 } else { 0.0 });
    let mut r = rng(4);
    let w = uniform_tensor::<f64, _>(&[3, 8, 3, 3], 0.7, &mut r);
    let b = uniform_tensor::<f64, _>(&[3], 0.5, &mut r);
    out.push(check_gradients("conv2d sparse input", &[w, b], h, move |g, v| {
        let x = g.leaf(sparse_x.clone());
        probe_loss(g, x.conv2d(v[0], Some(v[1]), 2, 1, false)?, 26)
    })?);

    let mut r = rng(5);
    let x = uniform_tensor::<f64, _>(&[2, 3, 5, 6], 1.0, &mut r);
    let w = uniform_tensor::<f64, _>(&[3, 1, 3, 3], 0.7, &mut r);
    out.push(check_gradients("dwconv2d stride2 pad1", &[x, w], h, |g, v| {
        probe_loss(g, v[0].dwconv2d(v[1], 2, 1)?, 14)
    })?);

    let mut r = rng(6);
    let x = uniform_tensor::<f64, _>(&[2, 3, 3, 4], 1.0, &mut r);
    let w = uniform_tensor::<f64, _>(&[3, 2, 2, 2], 0.7, &mut r);
    let b = uniform_tensor::<f64, _>(&[2], 0.5, &mut r);
    out.push(check_gradients("conv2d_transpose k2 s2", &[x, w, b], h, |g, v| {
        probe_loss(g, v[0].conv2d_transpose(v[1], Some(v[2]), 2, false)?, 15)
    })?);

    let mut r = rng(7);
    let x = uniform_tensor::<f64, _>(&[3, 5], 1.0, &mut r);
    let w = uniform_tensor::<f64, _>(&[4, 5], 0.7, &mut r);
    let b = uniform_tensor::<f64, _>(&[4], 0.5, &mut r);
    out.push(check_gradients("dense", &[x, w, b], h, |g, v| {
        probe_loss(g, v[0].dense(v[1], Some(v[2]), false)?, 16)
    })?);

    let x = offset_tensor(&[2, 3, 4, 4], 0.1, 1.0, 8);
    out.push(check_gradients("relu", &[x], h, |g, v| {
        probe_loss(g, v[0].relu()?, 17)
    })?);

    let mut r = rng(9);
    let x = uniform_tensor::<f64, _>(&[2, 3, 4, 4], 2.0, &mut r);
    out.push(check_gradients("sigmoid", &[x], h, |g, v| {
        probe_loss(g, v[0].sigmoid()?, 18)
    })?);

    let mut r = rng(10);
    let a = uniform_tensor::<f64, _>(&[2, 2, 3, 3], 1.0, &mut r);
    let b = uniform_tensor::<f64, _>(&[2, 2, 3, 3], 1.0, &mut r);
    out.push(check_gradients("add", &[a.clone(), b.clone()], h, |g, v| {
        probe_loss(g, v[0].add(v[1])?, 19)
    })?);
    out.push(check_gradients("mul", &[a, b], h, |g, v| {
        probe_loss(g, v[0].mul(v[1])?, 20)
    })?);

    let mut r = rng(11);
    let p1 = uniform_tensor::<f64, _>(&[2, 2, 3, 3], 1.0, &mut r);
    let p2 = uniform_tensor::<f64, _>(&[2, 1, 3, 3], 1.0, &mut r);
    let p3 = uniform_tensor::<f64, _>(&[2, 3, 3, 3], 1.0, &mut r);
    out.push(check_gradients("concat channels", &[p1, p2, p3], h, |g, v| {
        probe_loss(g, v[0].concat_channels(&[v[1], v[2]])?, 21)
    })?);

    let mut r = rng(12);
    let x = uniform_tensor::<f64, _>(&[2, 3, 4, 5], 1.0, &mut r);
    out.push(check_gradients("global_avg_pool", &[x], h, |g, v| {
        probe_loss(g, v[0].global_avg_pool()?, 22)
    })?);

    let mut r = rng(13);
    let x = uniform_tensor::<f64, _>(&[3, 5], 2.0, &mut r);
    out.push(check_gradients("softmax", &[x], h, |g, v| {
        probe_loss(g, v[0].softmax()?, 23)
    })?);

    let mut r = rng(14);
    let x = uniform_tensor::<f64, _>(&[4, 6], 2.0, &mut r);
    out.push(check_gradients("softmax_cross_entropy", &[x], h, |_g, v| {
        v[0].softmax_cross_entropy(&[0, 3, 5, 2])
    })?);

    let mut r = rng(15);
    let x = uniform_tensor::<f64, _>(&[2, 1, 4, 4], 3.0, &mut r);
    let targets = Tensor::from_fn(&[2, 1, 4, 4], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
    out.push(check_gradients("sigmoid_bce", &[x], h, move |_g, v| {
        v[0].sigmoid_bce(&targets)
    })?);

    let mut r = rng(16);
    let x = uniform_tensor::<f64, _>(&[3, 4, 3, 3], 1.0, &mut r);
    out.push(check_gradients("select_channel", &[x], h, |g, v| {
        probe_loss(g, v[0].select_channel(&[2, 0, 3])?, 24)
    })?);

    let mut r = rng(17);
    let x = uniform_tensor::<f64, _>(&[2, 3, 3, 4], 1.0, &mut r);
    let w = uniform_tensor::<f64, _>(&[2, 3], 1.0, &mut r);
    out.push(check_gradients("channel_mix", &[x, w], h, |g, v| {
        probe_loss(g, v[0].channel_mix(v[1])?, 25)
    })?);

    let mut r = rng(18);
    let x = uniform_tensor::<f64, _>(&[2, 5], 1.0, &mut r);
    out.push(check_gradients("scale + sum", &[x], h, |_g, v| {
        v[0].scale(2.5)?.sum()
    })?);

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_finite_difference() {
        for report in op_suite().unwrap() {
            assert!(
                report.passed(),
                "{} failed: max rel err {:.3e} over {} coords",
                report.name,
                report.max_rel_err,
                report.coords
            );
        }
    }
}
