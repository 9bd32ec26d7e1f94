//! Finite-difference cases for every differentiable op, shared by the
//! gradient tests of this crate and the workspace acceptance suite.
//!
//! Each op is reduced to a scalar through a random weighting so every
//! output element contributes.

#![allow(dead_code)]

use ncam_autodiff::{AutodiffError, GradCheck, Graph, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random instances checked per op.
pub const SEEDS: u64 = 20;

pub fn random<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-1.0..1.0)))
}

/// Values bounded away from zero so finite differences never straddle a kink.
pub fn away_from_zero<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let mag: f64 = rng.gen_range(0.1..1.0);
        T::lit(if rng.gen_bool(0.5) { mag } else { -mag })
    })
}

pub fn weighted_sum<T: Real>(g: &mut Graph<T>, out: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = g.constant(random(&mut rng, g.shape(out)));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

pub type OpFn<T> = fn(&mut Graph<T>, &[Var]) -> Result<Var, AutodiffError>;

pub struct Case<T: Real> {
    pub name: &'static str,
    pub inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor<T>>,
    pub op: OpFn<T>,
}

pub fn cases<T: Real>() -> Vec<Case<T>> {
    vec![
        Case {
            name: "add",
            inputs: |r| vec![random(r, &[3, 4]), random(r, &[3, 4])],
            op: |g, v| g.add(v[0], v[1]),
        },
        Case {
            name: "sub",
            inputs: |r| vec![random(r, &[5]), random(r, &[5])],
            op: |g, v| g.sub(v[0], v[1]),
        },
        Case {
            name: "mul",
            inputs: |r| vec![random(r, &[2, 3, 2]), random(r, &[2, 3, 2])],
            op: |g, v| g.mul(v[0], v[1]),
        },
        Case {
            name: "scale",
            inputs: |r| vec![random(r, &[6])],
            op: |g, v| Ok(g.scale(v[0], T::lit(-1.7))),
        },
        Case {
            name: "scale_by",
            inputs: |r| vec![random(r, &[2, 5]), random(r, &[1])],
            op: |g, v| g.scale_by(v[0], v[1]),
        },
        Case {
            name: "relu",
            inputs: |r| vec![away_from_zero(r, &[4, 6])],
            op: |g, v| Ok(g.relu(v[0])),
        },
        Case {
            name: "sum",
            inputs: |r| vec![random(r, &[3, 3])],
            op: |g, v| Ok(g.sum(v[0])),
        },
        Case {
            name: "mse",
            inputs: |r| vec![random(r, &[4, 3]), random(r, &[4, 3])],
            op: |g, v| g.mse(v[0], v[1]),
        },
        Case {
            name: "mean_over_axes",
            inputs: |r| vec![random(r, &[3, 4, 5])],
            op: |g, v| {
                let a = g.mean_over_axes(v[0], &[1, 2])?;
                let b = g.mean_over_axes(v[0], &[0])?;
                let b = g.reshape(b, &[20])?;
                let c = g.mean_over_axes(v[0], &[2])?;
                let c = g.reshape(c, &[12])?;
                g.concat(&[a, b, c])
            },
        },
        Case {
            name: "reshape+narrow+concat",
            inputs: |r| vec![random(r, &[6, 2]), random(r, &[3, 2])],
            op: |g, v| {
                let a = g.narrow(v[0], 1, 3)?;
                let c = g.concat(&[v[1], a, v[1]])?;
                g.reshape(c, &[18])
            },
        },
        Case {
            name: "conv2d 3x3 + bias",
            inputs: |r| vec![random(r, &[3, 5, 4]), random(r, &[2, 3, 3, 3]), random(r, &[2])],
            op: |g, v| g.conv2d(v[0], v[1], Some(v[2])),
        },
        Case {
            name: "conv2d 1x1 + bias",
            inputs: |r| vec![random(r, &[4, 3, 3]), random(r, &[5, 4, 1, 1]), random(r, &[5])],
            op: |g, v| g.conv2d(v[0], v[1], Some(v[2])),
        },
        Case {
            name: "depthwise3x3",
            inputs: |r| vec![random(r, &[2, 4, 5]), random(r, &[3, 3, 3])],
            op: |g, v| g.depthwise3x3(v[0], v[1]),
        },
        Case {
            name: "dense vector",
            inputs: |r| vec![random(r, &[6]), random(r, &[4, 6]), random(r, &[4])],
            op: |g, v| g.dense(v[0], v[1], Some(v[2])),
        },
        Case {
            name: "dense rows",
            inputs: |r| vec![random(r, &[3, 5]), random(r, &[2, 5]), random(r, &[2])],
            op: |g, v| g.dense(v[0], v[1], Some(v[2])),
        },
        Case {
            name: "instance_norm",
            inputs: |r| vec![random(r, &[3, 4, 4])],
            op: |g, v| g.instance_norm(v[0], T::lit(1e-5)),
        },
        Case {
            name: "softmax_lastdim",
            inputs: |r| vec![random(r, &[3, 2, 4])],
            op: |g, v| Ok(g.softmax_lastdim(v[0])),
        },
    ]
}

/// Worst relative error of each op over [`SEEDS`] random instances.
pub fn worst_errors<T: Real>(step: f64) -> Vec<(&'static str, f64)> {
    cases::<T>()
        .into_iter()
        .map(|case| {
            let mut worst = 0.0f64;
            for seed in 0..SEEDS {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = (case.inputs)(&mut rng);
                let op = case.op;
                let report = GradCheck::with_step(step)
                    .run(&inputs, |g: &mut Graph<T>, v: &[Var]| {
                        let out = op(g, v)?;
                        weighted_sum(g, out, seed)
                    })
                    .expect("op evaluates");
                worst = worst.max(report.max_relative_error());
            }
            (case.name, worst)
        })
        .collect()
}
