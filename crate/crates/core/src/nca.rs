//! The cellular automaton: seed grid, fixed Sobel perception and the
//! update rule whose two 1x1 convolutions are supplied from outside (by
//! the parameter predictor).
//!
//! Every cell applies the same rule; there is no alive masking. In
//! stochastic mode each cell fires its update with probability `p`, drawn
//! once per cell and shared across that cell's channels. The mask is a
//! graph constant, so gradients only flow through the cells that fired.

use ncam_autodiff::{Graph, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NcamError, Result};

/// Epsilon used by the perception normalization.
pub const NORM_EPSILON: f64 = 1e-5;

const IDENTITY: [f64; 9] = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcaConfig {
    /// Total channels per cell, visible plus hidden.
    pub channels: usize,
    /// Leading visible channels: 4 for RGBA, 3 for RGB.
    pub visible: usize,
    /// Width of the hidden 1x1 layer of the update rule.
    pub hidden: usize,
    /// Per-cell probability of applying the update at each step.
    pub update_prob: f64,
    pub steps: usize,
    /// Instance-normalize the perception output.
    pub normalize: bool,
}

impl NcaConfig {
    pub fn desk(visible: usize) -> Self {
        Self {
            channels: 16,
            visible,
            hidden: 32,
            update_prob: 1.0,
            steps: 32,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 16 && self.channels != 32 {
            return Err(NcamError::Config(format!(
                "cell channels must be 16 or 32, got {}",
                self.channels
            )));
        }
        if self.visible != 3 && self.visible != 4 {
            return Err(NcamError::Config(format!(
                "visible channels must be 3 or 4, got {}",
                self.visible
            )));
        }
        if self.hidden == 0 {
            return Err(NcamError::Config("hidden width must be positive".into()));
        }
        if !(self.update_prob > 0.0 && self.update_prob <= 1.0) {
            return Err(NcamError::Config(format!(
                "update probability must lie in (0, 1], got {}",
                self.update_prob
            )));
        }
        if self.steps == 0 {
            return Err(NcamError::Config("number of steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn perception_channels(&self) -> usize {
        3 * self.channels
    }

    pub fn is_synchronous(&self) -> bool {
        self.update_prob >= 1.0
    }

    /// Number of scalars in a flat [`NcaParams`] vector.
    pub fn param_count(&self) -> usize {
        let (p, h, c) = (self.perception_channels(), self.hidden, self.channels);
        p * h + h + h * c + c
    }

    /// Offsets of `w1`, `b1`, `w2`, `b2` inside the flat parameter vector.
    pub fn param_layout(&self) -> [(usize, usize); 4] {
        let (p, h, c) = (self.perception_channels(), self.hidden, self.channels);
        let w1 = (0, h * p);
        let b1 = (w1.1, h);
        let b1_end = b1.0 + b1.1;
        let w2 = (b1_end, c * h);
        let b2 = (w2.0 + w2.1, c);
        [w1, b1, w2, b2]
    }
}

/// Kernels of the two update convolutions, as graph values.
#[derive(Clone, Copy, Debug)]
pub struct NcaParams {
    /// (hidden, 3·channels, 1, 1)
    pub w1: Var,
    /// (hidden)
    pub b1: Var,
    /// (channels, hidden, 1, 1)
    pub w2: Var,
    /// (channels)
    pub b2: Var,
}

impl NcaParams {
    /// Splits a flat vector of length [`NcaConfig::param_count`].
    pub fn from_flat<T: Real>(g: &mut Graph<T>, flat: Var, cfg: &NcaConfig) -> Result<Self> {
        let expected = cfg.param_count();
        if g.shape(flat) != [expected] {
            return Err(NcamError::Config(format!(
                "parameter vector has shape {:?}, the automaton needs [{expected}]",
                g.shape(flat)
            )));
        }
        let [w1, b1, w2, b2] = cfg.param_layout();
        let (p, h, c) = (cfg.perception_channels(), cfg.hidden, cfg.channels);
        let w1 = g.narrow(flat, w1.0, w1.1)?;
        let w1 = g.reshape(w1, &[h, p, 1, 1])?;
        let b1 = g.narrow(flat, b1.0, b1.1)?;
        let w2 = g.narrow(flat, w2.0, w2.1)?;
        let w2 = g.reshape(w2, &[c, h, 1, 1])?;
        let b2 = g.narrow(flat, b2.0, b2.1)?;
        Ok(Self { w1, b1, w2, b2 })
    }

    /// Binds a flat parameter tensor as constants.
    pub fn constant<T: Real>(g: &mut Graph<T>, flat: &Tensor<T>, cfg: &NcaConfig) -> Result<Self> {
        let v = g.constant(flat.clone());
        Self::from_flat(g, v, cfg)
    }

    pub fn check<T: Real>(&self, g: &Graph<T>, cfg: &NcaConfig) -> Result<()> {
        let (p, h, c) = (cfg.perception_channels(), cfg.hidden, cfg.channels);
        let ok = g.shape(self.w1) == [h, p, 1, 1]
            && g.shape(self.b1) == [h]
            && g.shape(self.w2) == [c, h, 1, 1]
            && g.shape(self.b2) == [c];
        if ok {
            Ok(())
        } else {
            Err(NcamError::Config(format!(
                "update kernels {:?}/{:?}/{:?}/{:?} do not match {c} channels with hidden width {h}",
                g.shape(self.w1),
                g.shape(self.b1),
                g.shape(self.w2),
                g.shape(self.b2)
            )))
        }
    }
}

/// Automaton state on a graph.
#[derive(Clone, Copy, Debug)]
pub struct CellGrid {
    /// (channels, H, W)
    pub state: Var,
    pub step: usize,
}

/// Blank grid with a single live cell at `(H/2, W/2)`: its alpha channel
/// (RGBA only) and every hidden channel are 1, colors stay 0.
pub fn seed_state<T: Real>(height: usize, width: usize, cfg: &NcaConfig) -> Result<Tensor<T>> {
    if height < 3 || width < 3 {
        return Err(NcamError::Precondition(format!(
            "grid must be at least 3x3, got {height}x{width}"
        )));
    }
    let mut t = Tensor::zeros(&[cfg.channels, height, width]);
    let center = (height / 2) * width + width / 2;
    let first = if cfg.visible == 4 { 3 } else { cfg.visible };
    for ch in first..cfg.channels {
        t.data_mut()[ch * height * width + center] = T::one();
    }
    Ok(t)
}

pub fn seed_grid<T: Real>(g: &mut Graph<T>, height: usize, width: usize, cfg: &NcaConfig) -> Result<CellGrid> {
    let state = g.constant(seed_state(height, width, cfg)?);
    Ok(CellGrid { state, step: 0 })
}

/// Identity, Sobel-x and Sobel-y, in that order.
pub fn perception_kernels<T: Real>() -> Tensor<T> {
    let data = IDENTITY
        .iter()
        .chain(&SOBEL_X)
        .chain(&SOBEL_Y)
        .map(|&v| T::lit(v))
        .collect();
    Tensor::new(&[3, 3, 3], data).expect("static shape")
}

/// Raw depthwise filter responses, (3·channels, H, W), before normalization.
pub fn perceive_raw<T: Real>(g: &mut Graph<T>, state: Var) -> Result<Var> {
    let kernels = g.constant(perception_kernels());
    Ok(g.depthwise3x3(state, kernels)?)
}

pub fn perceive<T: Real>(g: &mut Graph<T>, state: Var, cfg: &NcaConfig) -> Result<Var> {
    let raw = perceive_raw(g, state)?;
    if cfg.normalize {
        Ok(g.instance_norm(raw, T::lit(NORM_EPSILON))?)
    } else {
        Ok(raw)
    }
}

/// `w2 * relu(w1 * perception + b1) + b2`, both as 1x1 convolutions.
pub fn update_rule<T: Real>(g: &mut Graph<T>, perception: Var, params: &NcaParams) -> Result<Var> {
    let h = g.conv2d(perception, params.w1, Some(params.b1))?;
    let h = g.relu(h);
    Ok(g.conv2d(h, params.w2, Some(params.b2))?)
}

/// Per-cell Bernoulli draws, row-major over the grid.
pub fn sample_update_mask(rng: &mut impl Rng, height: usize, width: usize, prob: f64) -> Vec<bool> {
    (0..height * width).map(|_| rng.gen::<f64>() < prob).collect()
}

/// One automaton step: `state + leak * mask * update(perceive(state))`.
pub fn step<T: Real>(
    g: &mut Graph<T>,
    grid: CellGrid,
    params: &NcaParams,
    leak: Var,
    cfg: &NcaConfig,
    rng: &mut impl Rng,
) -> Result<CellGrid> {
    params.check(g, cfg)?;
    let shape = g.shape(grid.state).to_vec();
    if shape.len() != 3 || shape[0] != cfg.channels {
        return Err(NcamError::Config(format!(
            "grid of shape {shape:?} does not have {} channels",
            cfg.channels
        )));
    }
    let perception = perceive(g, grid.state, cfg)?;
    let update = update_rule(g, perception, params)?;
    let mut delta = g.scale_by(update, leak)?;
    if !cfg.is_synchronous() {
        let (h, w) = (shape[1], shape[2]);
        let cells = sample_update_mask(rng, h, w, cfg.update_prob);
        let mask = Tensor::from_fn(&shape, |i| if cells[i % (h * w)] { T::one() } else { T::zero() });
        let mask = g.constant(mask);
        delta = g.mul(delta, mask)?;
    }
    let state = g.add(grid.state, delta)?;
    Ok(CellGrid {
        state,
        step: grid.step + 1,
    })
}

/// Visible channels of a grid state.
pub fn visible<T: Real>(g: &mut Graph<T>, state: Var, cfg: &NcaConfig) -> Result<Var> {
    Ok(g.narrow(state, 0, cfg.visible)?)
}

pub struct Growth<T> {
    pub grid: CellGrid,
    /// Visible channels after every `frames_every`-th step (and the last).
    pub frames: Vec<Tensor<T>>,
}

/// Runs `cfg.steps` steps from the seed grid.
///
/// With a capture stride `k`, a frame is recorded after each step whose
/// index is a multiple of `k` and after the final step, giving `ceil(T/k)`
/// frames.
pub fn grow<T: Real>(
    g: &mut Graph<T>,
    params: &NcaParams,
    leak: Var,
    cfg: &NcaConfig,
    height: usize,
    width: usize,
    rng_seed: u64,
    frames_every: Option<usize>,
) -> Result<Growth<T>> {
    cfg.validate()?;
    if frames_every == Some(0) {
        return Err(NcamError::Precondition("frame stride must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut grid = seed_grid(g, height, width, cfg)?;
    let mut frames = Vec::new();
    for t in 1..=cfg.steps {
        grid = step(g, grid, params, leak, cfg, &mut rng)?;
        if let Some(k) = frames_every {
            if t % k == 0 || t == cfg.steps {
                let vis = g.value(grid.state).data()[..cfg.visible * height * width].to_vec();
                frames.push(Tensor::new(&[cfg.visible, height, width], vis)?);
            }
        }
    }
    Ok(Growth { grid, frames })
}
