//! Checks shared by the integration tests and the acceptance suite. Each
//! check returns `Ok(detail)` or `Err(reason)` so callers can either
//! assert or report.

#![allow(dead_code)]

use image::{Rgba, RgbaImage};
use ncam_autodiff::{AutodiffError, GradCheck, Graph, Tensor, Var};
use ncam_core::data::{gen_glyphs, parse_cifar, CIFAR_RECORD, CIFAR_SIDE};
use ncam_core::dna::{DnaCodec, DnaEncoding, CATEGORIES, GENE_LEN};
use ncam_core::encoder::{Encoder, EncoderConfig};
use ncam_core::genelab::{mean_encoding, splice};
use ncam_core::image_io::{decode_png, encode_png, rgba8_to_tensor, tensor_to_rgba8};
use ncam_core::layers::{BlockKind, BlockSpec, ResidualBlock};
use ncam_core::nca::{self, NcaConfig, NcaParams};
use ncam_core::optim::{Adam, AdamConfig};
use ncam_core::params::{Bound, ParamKind, ParamStore, LEAK_MAX, LEAK_MIN};
use ncam_core::predictor::{Predictor, PredictorConfig};
use ncam_core::{
    Checkpoint, Dataset, EncodingMode, ForwardOptions, GlyphStyle, ModelConfig, Ncam, NcamError, TrainConfig,
    Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

/// Random instances per composite.
pub const GRAD_SEEDS: u64 = 20;
/// Finite-difference step for the double-precision composite checks; small
/// enough that a perturbation almost never crosses a relu kink.
pub const FD_STEP: f64 = 1e-6;
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;
/// Codec width of the DNA composites; gradient correctness does not depend
/// on it, and finite differences over a full-width codec take too long.
pub const COMPOSITE_CODEC_WIDTH: usize = 16;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77aa);
    let w = g.constant(uniform(&mut rng, g.shape(out), -1.0, 1.0));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

/// Store values moved off their initialization: biases and zero-initialized
/// heads become nonzero and leak factors land in `[0.5, 1.5]`.
fn perturbed_params(store: &ParamStore, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    store
        .iter()
        .map(|p| match p.kind {
            ParamKind::LeakFactor => uniform(rng, p.value.shape(), 0.5, 1.5),
            ParamKind::Weight => {
                let v = p.value.cast::<f64>();
                Tensor::from_fn(v.shape(), |i| v.data()[i] + rng.gen_range(-0.2..0.2))
            }
        })
        .collect()
}

/// Relative error of the gradient with respect to the extra inputs and
/// every parameter of `store`.
fn check_component<F>(store: &ParamStore, extra: Vec<Tensor<f64>>, seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &Bound, &[Var]) -> Result<Var, NcamError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n_extra = extra.len();
    let mut inputs = extra;
    inputs.extend(perturbed_params(store, &mut rng));
    GradCheck::with_step(FD_STEP)
        .run(&inputs, |g: &mut Graph<f64>, v: &[Var]| {
            let bound = Bound::from_vars(v[n_extra..].to_vec());
            let out = f(g, &bound, &v[..n_extra])?;
            Ok::<_, NcamError>(weighted_sum(g, out, seed)?)
        })
        .expect("composite evaluates")
        .max_relative_error()
}

pub fn small_nca(update_prob: f64, steps: usize) -> NcaConfig {
    NcaConfig {
        channels: 16,
        visible: 4,
        hidden: 6,
        update_prob,
        steps,
        normalize: true,
    }
}

fn block_case(spec: BlockSpec, input: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let block = ResidualBlock::new(&mut store, &mut rng, "b", spec, true);
    let x = uniform(&mut rng, input, -1.0, 1.0);
    check_component(&store, vec![x], seed, |g, p, v| block.forward(g, p, v[0]))
}

fn nca_step_case(update_prob: f64, seed: u64) -> f64 {
    let cfg = small_nca(update_prob, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = vec![
        uniform(&mut rng, &[16, 6, 6], -1.0, 1.0),
        uniform(&mut rng, &[cfg.param_count()], -0.5, 0.5),
        Tensor::scalar(rng.gen_range(0.5..1.5)),
    ];
    check_component(&ParamStore::new(), inputs, seed, |g, _, v| {
        let params = NcaParams::from_flat(g, v[1], &cfg)?;
        let grid = nca::CellGrid { state: v[0], step: 0 };
        // a fresh generator per evaluation keeps the update mask fixed
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(nca::step(g, grid, &params, v[2], &cfg, &mut mask_rng)?.state)
    })
}

/// Worst relative error of each composite over [`GRAD_SEEDS`] instances.
pub fn composite_gradient_errors() -> Vec<(&'static str, f64)> {
    type Case = (&'static str, Box<dyn Fn(u64) -> f64>);
    let cases: Vec<Case> = vec![
        ("CB1 on a grid", Box::new(|s| block_case(BlockSpec::cb1(3), &[3, 4, 5], s))),
        ("CB1 on rows", Box::new(|s| block_case(BlockSpec::cb1(3), &[5, 3], s))),
        ("CB3", Box::new(|s| block_case(BlockSpec::cb3(3), &[3, 5, 4], s))),
        ("FCB", Box::new(|s| block_case(BlockSpec::fcb(6, 2), &[6], s))),
        (
            "perception + instance norm",
            Box::new(|s| {
                let cfg = small_nca(1.0, 1);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let x = uniform(&mut rng, &[16, 6, 6], -1.0, 1.0);
                check_component(&ParamStore::new(), vec![x], s, |g, _, v| nca::perceive(g, v[0], &cfg))
            }),
        ),
        ("NCA step, synchronous", Box::new(|s| nca_step_case(1.0, s))),
        ("NCA step, stochastic mask", Box::new(|s| nca_step_case(0.5, s))),
        (
            "NCA growth from the seed (4 steps)",
            Box::new(|s| {
                let cfg = small_nca(1.0, 4);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let inputs = vec![
                    uniform(&mut rng, &[cfg.param_count()], -0.5, 0.5),
                    Tensor::scalar(rng.gen_range(0.5..1.5)),
                ];
                check_component(&ParamStore::new(), inputs, s, |g, _, v| {
                    let params = NcaParams::from_flat(g, v[0], &cfg)?;
                    let growth = nca::grow(g, &params, v[1], &cfg, 6, 6, s, None)?;
                    nca::visible(g, growth.grid.state, &cfg)
                })
            }),
        ),
        (
            "DNA encode",
            Box::new(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let mut store = ParamStore::new();
                let codec = DnaCodec::new(&mut store, &mut rng, 3, COMPOSITE_CODEC_WIDTH, true);
                let e = uniform(&mut rng, &[3], -1.0, 1.0);
                check_component(&store, vec![e], s, |g, p, v| codec.encode(g, p, v[0]))
            }),
        ),
        (
            "DNA encode + decode",
            Box::new(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let mut store = ParamStore::new();
                let codec = DnaCodec::new(&mut store, &mut rng, 3, COMPOSITE_CODEC_WIDTH, true);
                let e = uniform(&mut rng, &[3], -1.0, 1.0);
                check_component(&store, vec![e], s, |g, p, v| {
                    let dna = codec.encode(g, p, v[0])?;
                    codec.decode(g, p, dna)
                })
            }),
        ),
        (
            "parameter predictor",
            Box::new(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let mut store = ParamStore::new();
                let cfg = PredictorConfig {
                    input_dim: 3,
                    fc_width: 8,
                    fc_blocks: 2,
                    fc_expansion: 2,
                };
                let predictor = Predictor::new(&mut store, &mut rng, cfg, small_nca(1.0, 1), true).unwrap();
                let e = uniform(&mut rng, &[3], -1.0, 1.0);
                check_component(&store, vec![e], s, |g, p, v| predictor.forward_flat(g, p, v[0]))
            }),
        ),
        (
            "image encoder",
            Box::new(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let mut store = ParamStore::new();
                let cfg = EncoderConfig {
                    input_channels: 4,
                    trunk_width: 3,
                    trunk_blocks: vec![BlockKind::Cb3, BlockKind::Cb1],
                    slices: true,
                    fc_width: 6,
                    fc_blocks: 1,
                    fc_expansion: 2,
                    dim: 3,
                };
                let encoder = Encoder::new(&mut store, &mut rng, cfg, 5, 5, true).unwrap();
                let x = uniform(&mut rng, &[4, 5, 5], 0.0, 1.0);
                check_component(&store, vec![x], s, |g, p, v| encoder.forward(g, p, v[0]))
            }),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, f)| (name, (0..GRAD_SEEDS).map(&f).fold(0.0, f64::max)))
        .collect()
}

pub fn composite_gradient_check() -> Check {
    let errors = composite_gradient_errors();
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let failed: Vec<String> = errors
        .iter()
        .filter(|e| !(e.1 <= COMPOSITE_TOLERANCE))
        .map(|(n, e)| format!("{n}: {e:.2e}"))
        .collect();
    if failed.is_empty() {
        Ok(format!(
            "{} composites x {GRAD_SEEDS} seeds, worst relative error {worst:.2e}",
            errors.len()
        ))
    } else {
        Err(format!("above {COMPOSITE_TOLERANCE:e}: {}", failed.join(", ")))
    }
}

/// One random dynamic-convolution instance: a perturbed predictor emits
/// the automaton kernels for a random encoding, and one automaton step runs
/// with those kernels (a) inside the differentiable graph and (b) copied
/// out and bound as plain constants. Returns whether (a) and (b) agree
/// bit for bit, plus the largest deviation of the update from an explicit
/// per-cell loop in double precision.
pub fn dynamic_conv_instance(seed: u64) -> Result<(bool, f64), NcamError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let visible = if rng.gen_bool(0.5) { 3 } else { 4 };
    let cfg = NcaConfig {
        channels: if rng.gen_bool(0.75) { 16 } else { 32 },
        visible,
        hidden: rng.gen_range(4..33),
        update_prob: if rng.gen_bool(0.5) { 1.0 } else { 0.5 },
        steps: 1,
        normalize: rng.gen_bool(0.5),
    };
    let (h, w) = (rng.gen_range(3..9), rng.gen_range(3..9));
    let dim = rng.gen_range(2..6);
    let mut store = ParamStore::new();
    let pcfg = PredictorConfig {
        input_dim: dim,
        fc_width: 8,
        fc_blocks: 1,
        fc_expansion: 2,
    };
    let predictor = Predictor::new(&mut store, &mut rng, pcfg, cfg.clone(), true)?;
    let values = perturbed_params(&store, &mut rng);
    for (p, v) in store.iter_mut().zip(values) {
        p.value = v.cast();
    }
    let e: Tensor<f32> = uniform(&mut rng, &[dim], -1.0, 1.0).cast();
    let state: Tensor<f32> = uniform(&mut rng, &[cfg.channels, h, w], -1.0, 1.0).cast();
    let leak = rng.gen_range(0.5f32..1.5);

    // (a) kernels predicted inside the graph
    let mut g = Graph::<f32>::new();
    let bound = store.bind(&mut g);
    let ev = g.param(e.clone());
    let flat = predictor.forward_flat(&mut g, &bound, ev)?;
    let params = NcaParams::from_flat(&mut g, flat, &cfg)?;
    let lv = g.param(Tensor::scalar(leak));
    let sv = g.param(state.clone());
    let grid = nca::CellGrid { state: sv, step: 0 };
    let out_a = nca::step(&mut g, grid, &params, lv, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?.state;
    let total = g.sum(out_a);
    g.backward(total)?;
    let reaches_encoding = g.grad(ev).is_some_and(|gr| gr.iter().any(|&x| x != 0.0));
    let a = g.value(out_a).clone();
    let kernels = g.value(flat).clone();

    // (b) the same kernels as constants
    let mut g2 = Graph::<f32>::no_grad();
    let params2 = NcaParams::constant(&mut g2, &kernels, &cfg)?;
    let lv2 = g2.constant(Tensor::scalar(leak));
    let sv2 = g2.constant(state.clone());
    let grid2 = nca::CellGrid { state: sv2, step: 0 };
    let out_b = nca::step(&mut g2, grid2, &params2, lv2, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?.state;
    let b = g2.value(out_b);
    let identical = reaches_encoding && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());

    // explicit per-cell loop for the update rule, in double precision
    let mut g3 = Graph::<f64>::no_grad();
    let k64: Tensor<f64> = kernels.cast();
    let params3 = NcaParams::constant(&mut g3, &k64, &cfg)?;
    let s3 = g3.constant(state.cast());
    let perception = nca::perceive(&mut g3, s3, &cfg)?;
    let update = nca::update_rule(&mut g3, perception, &params3)?;
    let pd = g3.value(perception).data();
    let [w1o, b1o, w2o, b2o] = cfg.param_layout();
    let kd = k64.data();
    let (pc, hid, ch, hw) = (cfg.perception_channels(), cfg.hidden, cfg.channels, h * w);
    let mut worst = 0.0f64;
    for px in 0..hw {
        let hidden: Vec<f64> = (0..hid)
            .map(|j| {
                let z = kd[b1o.0 + j] + (0..pc).map(|m| kd[w1o.0 + j * pc + m] * pd[m * hw + px]).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        for c in 0..ch {
            let y = kd[b2o.0 + c] + (0..hid).map(|j| kd[w2o.0 + c * hid + j] * hidden[j]).sum::<f64>();
            worst = worst.max((y - g3.value(update).data()[c * hw + px]).abs());
        }
    }
    debug_assert_eq!(w1o.1, hid * pc);
    debug_assert_eq!(w2o.1, ch * hid);
    Ok((identical, worst))
}

pub fn dynamic_conv_oracle(instances: u64) -> Check {
    let mut mismatches = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let (same, dev) = dynamic_conv_instance(seed).map_err(|e| format!("instance {seed}: {e}"))?;
        if !same {
            mismatches.push(seed);
        }
        worst = worst.max(dev);
    }
    if !mismatches.is_empty() {
        return Err(format!("predicted and constant kernels differ on instances {mismatches:?}"));
    }
    if worst > 1e-12 {
        return Err(format!("update deviates from the per-cell loop by {worst:e}"));
    }
    Ok(format!(
        "{instances} instances bit-identical; per-cell loop deviation {worst:.1e}"
    ))
}

/// Tiny DNA model and glyph set used by the model-level invariants.
pub fn tiny_dna_setup() -> (Ncam, Dataset) {
    let data = gen_glyphs(4, 8, GlyphStyle::Mixed, 1).unwrap();
    let mut cfg = ModelConfig::desk(4, 8, 8, 4, EncodingMode::Dna);
    cfg.nca.steps = 6;
    cfg.init_seed = 3;
    (Ncam::new(cfg).unwrap(), data)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn leak_clamp() -> Check {
    let mut store = ParamStore::new();
    let ids: Vec<_> = (0..4).map(|i| store.add_leak(format!("lf{i}"), true)).collect();
    for (id, v) in ids.iter().zip([1e6f32, -3.0, 0.0, 0.5]) {
        store.get_mut(*id).value = Tensor::scalar(v);
    }
    store.clamp_leak_factors();
    let vals: Vec<f32> = ids.iter().map(|&id| store.get(id).value.data()[0]).collect();
    ensure(vals == [LEAK_MAX, LEAK_MIN, LEAK_MIN, 0.5], || format!("clamped to {vals:?}"))?;
    // an optimizer step that pushes hard past the bound lands on it
    let mut opt = Adam::new(
        AdamConfig {
            lr: 10.0,
            ..AdamConfig::default()
        },
        &store,
    );
    for _ in 0..5 {
        opt.step(&mut store, &[Some(vec![1.0]), Some(vec![1.0]), Some(vec![-1.0]), Some(vec![-1.0])])
            .map_err(|e| e.to_string())?;
    }
    let vals: Vec<f32> = ids.iter().map(|&id| store.get(id).value.data()[0]).collect();
    ensure(vals.iter().all(|v| (LEAK_MIN..=LEAK_MAX).contains(v)), || {
        format!("after updates {vals:?}")
    })?;
    Ok(format!("all leak factors within [{LEAK_MIN:e}, {LEAK_MAX:e}]"))
}

fn instance_norm_stats() -> Check {
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = rng.gen_range(0.5..5.0);
        let x = uniform(&mut rng, &[6, 8, 8], -scale, scale);
        let mut g = Graph::<f64>::no_grad();
        let v = g.constant(x);
        let y = g.instance_norm(v, nca::NORM_EPSILON).map_err(|e| e.to_string())?;
        for ch in g.value(y).data().chunks(64) {
            let mean = ch.iter().sum::<f64>() / 64.0;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            worst_mean = worst_mean.max(mean.abs());
            worst_var = worst_var.max((var - 1.0).abs());
        }
    }
    ensure(worst_mean <= 1e-12 && worst_var <= 1e-3, || {
        format!("mean {worst_mean:e}, variance deviation {worst_var:e}")
    })?;
    Ok(format!("|mean| <= {worst_mean:.1e}, |var - 1| <= {worst_var:.1e}"))
}

fn softmax_rows(model: &Ncam, data: &Dataset) -> Check {
    let mut worst = 0.0f64;
    for item in &data.items {
        let dna = model.dna_of_image(&item.image).map_err(|e| e.to_string())?;
        for r in 0..dna.rows() {
            let row = dna.row(r);
            ensure(row.iter().all(|&p| p >= 0.0), || format!("negative probability in row {r}"))?;
            worst = worst.max((row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("row sums deviate by {worst:e}"))?;
    Ok(format!("every letter row sums to 1 within {worst:.1e}"))
}

fn bernoulli_rate() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let masks = 100;
    let cells = 64 * 64;
    let on: usize = (0..masks)
        .map(|_| nca::sample_update_mask(&mut rng, 64, 64, 0.5).iter().filter(|&&b| b).count())
        .sum();
    let rate = on as f64 / (masks * cells) as f64;
    // five standard deviations of the mean of 409600 fair draws
    let bound = 5.0 * (0.25 / (masks * cells) as f64).sqrt();
    ensure((rate - 0.5).abs() <= bound, || format!("rate {rate}"))?;
    let all = nca::sample_update_mask(&mut rng, 16, 16, 1.0);
    ensure(all.iter().all(|&b| b), || "p = 1 left cells out".into())?;
    Ok(format!("rate {rate:.4} within 0.5 ± {bound:.4}; p = 1 updates every cell"))
}

fn seed_grid_counts() -> Check {
    for (visible, h, w) in [(4, 8, 8), (3, 8, 8), (4, 5, 7), (4, 3, 3)] {
        let cfg = NcaConfig::desk(visible);
        let t: Tensor<f64> = nca::seed_state(h, w, &cfg).map_err(|e| e.to_string())?;
        let live: Vec<usize> = (0..t.numel()).filter(|&i| t.data()[i] != 0.0).collect();
        let expected = if visible == 4 { cfg.channels - 3 } else { cfg.channels - visible };
        ensure(live.len() == expected, || format!("{visible}/{h}x{w}: {} live entries", live.len()))?;
        let center = (h / 2) * w + w / 2;
        ensure(live.iter().all(|&i| i % (h * w) == center && t.data()[i] == 1.0), || {
            "live entries outside the center cell".into()
        })?;
    }
    ensure(nca::seed_state::<f64>(2, 8, &NcaConfig::desk(4)).is_err(), || {
        "2-row grid accepted".into()
    })?;
    Ok("one live cell at the center, alpha and hidden channels set".into())
}

fn random_one_hot(dim: usize, rng: &mut ChaCha8Rng) -> DnaEncoding {
    let mut t = Tensor::zeros(&[dim, GENE_LEN, CATEGORIES]);
    for r in 0..dim * GENE_LEN {
        t.data_mut()[r * CATEGORIES + rng.gen_range(0..CATEGORIES)] = 1.0;
    }
    DnaEncoding::new(t).unwrap()
}

fn tau_monotone() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let taus = [0.26, 0.4, 0.5, 0.6, 0.75, 0.9, 1.0];
    for _ in 0..50 {
        let n = rng.gen_range(1..7);
        // correlated sources so that many rows are contested
        let base = random_one_hot(4, &mut rng);
        let sources: Vec<DnaEncoding> = (0..n)
            .map(|_| {
                let other = random_one_hot(4, &mut rng);
                let mut s = base.clone();
                for r in 0..s.rows() {
                    if rng.gen_bool(0.4) {
                        s.probs.data_mut()[r * CATEGORIES..][..CATEGORIES].copy_from_slice(other.row(r));
                    }
                }
                s
            })
            .collect();
        let counts: Vec<usize> = taus
            .iter()
            .map(|&t| mean_encoding(&sources, t, false).unwrap().asserted)
            .collect();
        ensure(counts.windows(2).all(|w| w[1] <= w[0]), || format!("counts {counts:?}"))?;
    }
    Ok(format!("asserted counts non-increasing over τ = {taus:?} on 50 groups"))
}

fn splice_fixed_point(model: &Ncam, data: &Dataset) -> Check {
    let opts = ForwardOptions {
        frames_every: Some(2),
        ..ForwardOptions::default()
    };
    for item in &data.items {
        let dna = model.dna_of_image(&item.image).map_err(|e| e.to_string())?.discretize();
        for tau in [0.5, 0.8, 1.0] {
            let mean = mean_encoding(&[dna.clone(), dna.clone(), dna.clone()], tau, false).unwrap();
            ensure(mean.asserted == dna.rows(), || format!("unanimity asserted {}", mean.asserted))?;
            let spliced = splice(&dna, &mean).unwrap();
            ensure(spliced == dna, || "self-splice changed the code".into())?;
            let (a, fa) = model.grow_from_dna(&dna, &opts).map_err(|e| e.to_string())?;
            let (b, fb) = model.grow_from_dna(&spliced, &opts).map_err(|e| e.to_string())?;
            ensure(a == b && fa == fb, || "regrowth differs".into())?;
        }
    }
    Ok("self-splice returns the target and regrows identical frames".into())
}

fn checkpoint_round_trip(model: &Ncam, data: &Dataset) -> Check {
    let cfg = TrainConfig {
        batch_size: 2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model.clone(), cfg).map_err(|e| e.to_string())?;
    trainer.run(data, 3, None, None).map_err(|e| e.to_string())?;
    let bytes = trainer.checkpoint().to_bytes().map_err(|e| e.to_string())?;
    let back = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure(back.to_bytes().map_err(|e| e.to_string())? == bytes, || "re-encoding differs".into())?;
    for (a, b) in trainer.model.store.iter().zip(back.model.store.iter()) {
        let same = a.name == b.name && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || format!("parameter {} differs", a.name))?;
    }
    let opts = ForwardOptions::default();
    let img = &data.items[0].image;
    let x = trainer.model.reconstruct_image(img, &opts).map_err(|e| e.to_string())?;
    let y = back.model.reconstruct_image(img, &opts).map_err(|e| e.to_string())?;
    ensure(x == y, || "reconstructions differ".into())?;
    Ok(format!("{} bytes, parameters and optimizer state restored bit for bit", bytes.len()))
}

fn synchronous_determinism(model: &Ncam, data: &Dataset) -> Check {
    let img = &data.items[1].image;
    let run = |seed: u64| {
        model
            .reconstruct_image(
                img,
                &ForwardOptions {
                    nca_seed: seed,
                    frames_every: Some(1),
                    ..ForwardOptions::default()
                },
            )
            .unwrap()
    };
    ensure(run(0) == run(0) && run(0) == run(12345), || {
        "synchronous growth depends on the mask seed".into()
    })?;
    let mut stochastic = model.clone();
    stochastic.config.nca.update_prob = 0.5;
    let run_s = |seed: u64| {
        stochastic
            .reconstruct_image(
                img,
                &ForwardOptions {
                    nca_seed: seed,
                    ..ForwardOptions::default()
                },
            )
            .unwrap()
    };
    ensure(run_s(4) == run_s(4), || "stochastic growth is not reproducible".into())?;
    Ok("repeat runs bit-identical; seed-independent when synchronous".into())
}

/// Every structural invariant with its outcome.
pub fn invariants() -> Vec<(&'static str, Check)> {
    let (model, data) = tiny_dna_setup();
    vec![
        ("leak-factor clamp bounds", leak_clamp()),
        ("instance-norm statistics", instance_norm_stats()),
        ("softmax row-stochasticity", softmax_rows(&model, &data)),
        ("Bernoulli mask rate", bernoulli_rate()),
        ("seed-grid construction", seed_grid_counts()),
        ("mean-encoding τ-monotonicity", tau_monotone()),
        ("splice unanimity fixed point", splice_fixed_point(&model, &data)),
        ("checkpoint round trip", checkpoint_round_trip(&model, &data)),
        ("synchronous determinism", synchronous_determinism(&model, &data)),
    ]
}

/// Byte value of the synthetic CIFAR fixture for record `r`, plane `c`,
/// pixel `(y, x)`.
pub fn cifar_byte(r: usize, c: usize, y: usize, x: usize) -> u8 {
    ((r * 7 + c * 50 + y * 3 + x * 5) % 256) as u8
}

pub fn cifar_bytes(records: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(records * CIFAR_RECORD);
    for r in 0..records {
        out.push((r % 10) as u8);
        for c in 0..3 {
            for y in 0..CIFAR_SIDE {
                for x in 0..CIFAR_SIDE {
                    out.push(cifar_byte(r, c, y, x));
                }
            }
        }
    }
    out
}

/// Hand-built two-record batch: record 0 is label 6 with a pure red
/// top-left pixel, green at (0, 1) and blue at (1, 0), black elsewhere;
/// record 1 is label 9 and mid-grey everywhere.
pub fn two_record_fixture() -> Vec<u8> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut rec0 = vec![0u8; CIFAR_RECORD];
    rec0[0] = 6;
    rec0[1] = 255; // red plane, pixel (0, 0)
    rec0[1 + plane + 1] = 255; // green plane, pixel (0, 1)
    rec0[1 + 2 * plane + CIFAR_SIDE] = 255; // blue plane, pixel (1, 0)
    let mut rec1 = vec![128u8; CIFAR_RECORD];
    rec1[0] = 9;
    [rec0, rec1].concat()
}

pub fn cifar_ingestion(dir: &std::path::Path) -> Check {
    // hand-built fixture
    let items = parse_cifar(&two_record_fixture(), "fixture", 0).map_err(|e| e.to_string())?;
    ensure(items.len() == 2, || format!("{} records", items.len()))?;
    ensure(items[0].label == Some(6) && items[1].label == Some(9), || "labels".into())?;
    let img = &items[0].image;
    ensure(img.shape() == [3, 32, 32], || format!("shape {:?}", img.shape()))?;
    let px = |c: usize, y: usize, x: usize| img.data()[c * 1024 + y * 32 + x];
    ensure(
        px(0, 0, 0) == 1.0 && px(1, 0, 0) == 0.0 && px(1, 0, 1) == 1.0 && px(2, 1, 0) == 1.0 && px(0, 1, 0) == 0.0,
        || "channel-major pixel layout".into(),
    )?;
    ensure(img.data().iter().filter(|&&v| v != 0.0).count() == 3, || "stray pixels".into())?;
    ensure(items[1].image.data().iter().all(|&v| v == 128.0 / 255.0), || "grey record".into())?;
    // full-size batch on disk
    let path = dir.join("data_batch_1.bin");
    std::fs::write(&path, cifar_bytes(10_000)).map_err(|e| e.to_string())?;
    let ds = ncam_core::data::load_cifar10(&path).map_err(|e| e.to_string())?;
    ensure(ds.len() == 10_000 && ds.visible == 3, || format!("{} records", ds.len()))?;
    for r in [0usize, 1, 4999, 9999] {
        let it = &ds.items[r];
        ensure(it.id == r && it.label == Some((r % 10) as u8), || format!("record {r} header"))?;
        for (c, y, x) in [(0, 0, 0), (1, 5, 9), (2, 31, 31)] {
            let v = it.image.data()[c * 1024 + y * 32 + x];
            ensure(v == cifar_byte(r, c, y, x) as f32 / 255.0, || format!("record {r} pixel {c},{y},{x}"))?;
        }
    }
    // truncated file is rejected with the offset of the partial record
    let mut short = cifar_bytes(3);
    short.truncate(short.len() - 10);
    match parse_cifar(&short, "short", 0) {
        Err(NcamError::Malformed { offset, .. }) if offset == 2 * CIFAR_RECORD as u64 => {}
        other => return Err(format!("truncated batch gave {:?}", other.map(|v| v.len()))),
    }
    Ok("2-record fixture layout exact; 10,000-record batch parsed".into())
}

pub fn png_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = RgbaImage::from_fn(23, 17, |_, _| Rgba([rng.gen(), rng.gen(), rng.gen(), rng.gen()]));
    let bytes = encode_png(&img).map_err(|e| e.to_string())?;
    let back = decode_png(&bytes).map_err(|e| e.to_string())?;
    ensure(back == img, || "PNG codec changed pixels".into())?;
    // every (color, alpha) pair through the premultiplied tensor path
    let pairs = RgbaImage::from_fn(256, 256, |x, y| Rgba([x as u8, 255 - x as u8, (x ^ y) as u8, y as u8]));
    let t = rgba8_to_tensor(&pairs, 4).map_err(|e| e.to_string())?;
    let back = tensor_to_rgba8(&t).map_err(|e| e.to_string())?;
    for (a, b) in pairs.pixels().zip(back.pixels()) {
        let expected = if a[3] == 0 { Rgba([0, 0, 0, 0]) } else { *a };
        ensure(*b == expected, || format!("{a:?} came back as {b:?}"))?;
    }
    Ok("PNG bytes lossless; tensor path exact for every color/alpha pair with alpha > 0".into())
}
