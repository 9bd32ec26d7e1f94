//! Continuous encoder: a residual convolutional trunk without any spatial
//! downsampling, slice pooling, fully-connected blocks and a final dense
//! projection to the encoding dimension.

use ncam_autodiff::{Graph, Real, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NcamError, Result};
use crate::layers::{slice_pool, slice_pool_len, BlockKind, BlockSpec, Conv, Dense, Init, ResidualBlock};
use crate::params::{Bound, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Channels of the input image (3 or 4).
    pub input_channels: usize,
    /// Width of the convolutional trunk.
    pub trunk_width: usize,
    /// Convolutional block kinds after the stem, in order.
    pub trunk_blocks: Vec<BlockKind>,
    /// Use the four-way slice pooling; otherwise the spatial mean only.
    pub slices: bool,
    /// Width of the fully-connected blocks.
    pub fc_width: usize,
    pub fc_blocks: usize,
    pub fc_expansion: usize,
    /// Encoding dimension.
    pub dim: usize,
}

impl EncoderConfig {
    pub fn desk(input_channels: usize, dim: usize) -> Self {
        Self {
            input_channels,
            trunk_width: 8,
            trunk_blocks: vec![BlockKind::Cb3, BlockKind::Cb1, BlockKind::Cb3, BlockKind::Cb1],
            slices: true,
            fc_width: 128,
            fc_blocks: 2,
            fc_expansion: 2,
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.trunk_width == 0 || self.fc_width == 0 || self.dim == 0 {
            return Err(NcamError::Config("encoder widths must be positive".into()));
        }
        if self.fc_expansion == 0 {
            return Err(NcamError::Config("fc expansion must be positive".into()));
        }
        if self.trunk_blocks.contains(&BlockKind::Fcb) {
            return Err(NcamError::Config("the convolutional trunk cannot hold FC blocks".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    /// Image size the pooling projection was built for.
    pub height: usize,
    pub width: usize,
    stem: Conv,
    trunk: Vec<ResidualBlock>,
    pool_proj: Dense,
    fc: Vec<ResidualBlock>,
    out: Dense,
}

impl Encoder {
    /// The slice-pooled length depends on the image size, so the encoder is
    /// built for one `height x width`.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        config: EncoderConfig,
        height: usize,
        width: usize,
        trainable_leaks: bool,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.trunk_width;
        let stem = Conv::new(store, rng, "encoder.stem", config.input_channels, c, 3, Init::Lecun);
        let trunk = config
            .trunk_blocks
            .iter()
            .enumerate()
            .map(|(i, kind)| {
                let spec = match kind {
                    BlockKind::Cb3 => BlockSpec::cb3(c),
                    _ => BlockSpec::cb1(c),
                };
                ResidualBlock::new(store, rng, &format!("encoder.trunk{i}"), spec, trainable_leaks)
            })
            .collect();
        let pooled = slice_pool_len(c, height, width, config.slices);
        let pool_proj = Dense::new(store, rng, "encoder.pool_proj", pooled, config.fc_width, Init::Lecun);
        let fc = (0..config.fc_blocks)
            .map(|i| {
                let spec = BlockSpec::fcb(config.fc_width, config.fc_expansion);
                ResidualBlock::new(store, rng, &format!("encoder.fc{i}"), spec, trainable_leaks)
            })
            .collect();
        let out = Dense::new(store, rng, "encoder.out", config.fc_width, config.dim, Init::Lecun);
        Ok(Self {
            config,
            height,
            width,
            stem,
            trunk,
            pool_proj,
            fc,
            out,
        })
    }

    /// Maps a (V, H, W) image to a D-dimensional encoding.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<Var> {
        let shape = g.shape(image).to_vec();
        if shape != [self.config.input_channels, self.height, self.width] {
            return Err(NcamError::Precondition(format!(
                "encoder expects images of shape [{}, {}, {}], got {shape:?}",
                self.config.input_channels, self.height, self.width
            )));
        }
        let mut x = self.stem.forward(g, p, image)?;
        for block in &self.trunk {
            x = block.forward(g, p, x)?;
        }
        let pooled = slice_pool(g, x, self.config.slices)?;
        let mut h = self.pool_proj.forward(g, p, pooled)?;
        for block in &self.fc {
            h = block.forward(g, p, h)?;
        }
        self.out.forward(g, p, h)
    }
}
