//! Building blocks shared by the encoder, the DNA codec and the parameter
//! predictor: affine layers, width-preserving residual blocks with a leak
//! factor, and slice pooling.

use ncam_autodiff::{Graph, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NcamError, Result};
use crate::params::{uniform, Bound, ParamId, ParamKind, ParamStore};

/// Weight initialization scheme for a layer with the given fan-in.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Variance `2 / fan_in`, for layers followed by a ReLU.
    He,
    /// Variance `1 / fan_in`.
    Lecun,
    Zeros,
}

impl Init {
    pub(crate) fn tensor(self, rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
        let fan = fan_in.max(1) as f64;
        match self {
            Init::He => uniform(rng, shape, (6.0 / fan).sqrt()),
            Init::Lecun => uniform(rng, shape, (3.0 / fan).sqrt()),
            Init::Zeros => Tensor::zeros(shape),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
    ) -> Self {
        let w = init.tensor(rng, &[outputs, inputs], inputs);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Weight),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]), ParamKind::Weight),
            inputs,
            outputs,
        }
    }

    /// Applies to a vector (N) or to each row of a (B, N) batch.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.dense(x, p.get(self.weight), Some(p.get(self.bias)))?)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        init: Init,
    ) -> Self {
        let shape = [outputs, inputs, kernel, kernel];
        let w = init.tensor(rng, &shape, inputs * kernel * kernel);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Weight),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]), ParamKind::Weight),
            inputs,
            outputs,
            kernel,
        }
    }

    /// Image input (C,H,W) is convolved; a (N, C) row batch is treated as a
    /// length-N sequence with C channels and only supports 1x1 kernels.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (w, b) = (p.get(self.weight), p.get(self.bias));
        match g.shape(x).len() {
            3 => Ok(g.conv2d(x, w, Some(b))?),
            2 if self.kernel == 1 => {
                let w = g.reshape(w, &[self.outputs, self.inputs])?;
                Ok(g.dense(x, w, Some(b))?)
            }
            _ => Err(NcamError::Precondition(format!(
                "conv layer cannot consume input of shape {:?}",
                g.shape(x)
            ))),
        }
    }
}

/// Residual block flavour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// 3x3 convolutions, inner width doubled.
    Cb3,
    /// 1x1 convolutions, inner width quadrupled.
    Cb1,
    /// Dense layers with a configurable expansion.
    Fcb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub width: usize,
    pub expansion: usize,
}

impl BlockSpec {
    pub fn cb3(width: usize) -> Self {
        Self {
            kind: BlockKind::Cb3,
            width,
            expansion: 2,
        }
    }

    pub fn cb1(width: usize) -> Self {
        Self {
            kind: BlockKind::Cb1,
            width,
            expansion: 4,
        }
    }

    pub fn fcb(width: usize, expansion: usize) -> Self {
        Self {
            kind: BlockKind::Fcb,
            width,
            expansion,
        }
    }

    pub fn inner_width(&self) -> usize {
        self.width * self.expansion
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Conv(Conv),
    Dense(Dense),
}

impl Layer {
    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match self {
            Layer::Conv(c) => c.forward(g, p, x),
            Layer::Dense(d) => d.forward(g, p, x),
        }
    }
}

/// `out = x + leak * contract(relu(expand(x)))`; output shape equals input
/// shape.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub spec: BlockSpec,
    expand: Layer,
    contract: Layer,
    pub leak: ParamId,
}

impl ResidualBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        spec: BlockSpec,
        trainable_leak: bool,
    ) -> Self {
        let inner = spec.inner_width();
        let (expand, contract) = match spec.kind {
            BlockKind::Cb3 | BlockKind::Cb1 => {
                let k = if spec.kind == BlockKind::Cb3 { 3 } else { 1 };
                (
                    Layer::Conv(Conv::new(store, rng, &format!("{name}.expand"), spec.width, inner, k, Init::He)),
                    Layer::Conv(Conv::new(store, rng, &format!("{name}.contract"), inner, spec.width, k, Init::Lecun)),
                )
            }
            BlockKind::Fcb => (
                Layer::Dense(Dense::new(store, rng, &format!("{name}.expand"), spec.width, inner, Init::He)),
                Layer::Dense(Dense::new(store, rng, &format!("{name}.contract"), inner, spec.width, Init::Lecun)),
            ),
        };
        Self {
            spec,
            expand,
            contract,
            leak: store.add_leak(format!("{name}.leak"), trainable_leak),
        }
    }

    fn check_width(&self, shape: &[usize]) -> Result<()> {
        let width = match (self.spec.kind, shape.len()) {
            (BlockKind::Cb3, 3) | (BlockKind::Cb1, 3) | (BlockKind::Fcb, 1) => shape[0],
            (BlockKind::Cb1, 2) | (BlockKind::Fcb, 2) => shape[1],
            _ => 0,
        };
        if width != self.spec.width {
            return Err(NcamError::Precondition(format!(
                "{:?} block of width {} cannot consume input of shape {shape:?}",
                self.spec.kind, self.spec.width
            )));
        }
        Ok(())
    }

    /// The residual branch alone, before the leak factor.
    pub fn inner<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        self.check_width(g.shape(x))?;
        let h = self.expand.forward(g, p, x)?;
        let h = g.relu(h);
        self.contract.forward(g, p, h)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let inner = self.inner(g, p, x)?;
        let scaled = g.scale_by(inner, p.get(self.leak))?;
        Ok(g.add(x, scaled)?)
    }
}

/// Length of the slice-pooled vector for a (c, h, w) tensor.
pub fn slice_pool_len(c: usize, h: usize, w: usize, slices: bool) -> usize {
    if slices {
        c + c * w + c * h + h * w
    } else {
        c
    }
}

/// Concatenates the mean over {h,w} (c values), the mean over h (c·w), the
/// mean over w (c·h) and the mean over c (h·w). With `slices` disabled only
/// the spatial mean is returned.
pub fn slice_pool<T: Real>(g: &mut Graph<T>, x: Var, slices: bool) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(NcamError::Precondition(format!(
            "slice pooling expects (c, h, w), got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let spatial = g.mean_over_axes(x, &[1, 2])?;
    if !slices {
        return Ok(spatial);
    }
    let over_h = g.mean_over_axes(x, &[1])?;
    let over_h = g.reshape(over_h, &[c * w])?;
    let over_w = g.mean_over_axes(x, &[2])?;
    let over_w = g.reshape(over_w, &[c * h])?;
    let over_c = g.mean_over_axes(x, &[0])?;
    let over_c = g.reshape(over_c, &[h * w])?;
    Ok(g.concat(&[spatial, over_h, over_w, over_c])?)
}
