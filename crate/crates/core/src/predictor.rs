//! Parameter predictor: maps an encoding to the flat kernel vector of the
//! automaton's update rule, so every image gets its own automaton.

use ncam_autodiff::{Graph, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NcamError, Result};
use crate::layers::{BlockSpec, Dense, Init, ResidualBlock};
use crate::nca::{NcaConfig, NcaParams};
use crate::params::{uniform, Bound, ParamStore};

/// Scale of the random head weights feeding the first update layer,
/// relative to a unit-variance initialization.
const HEAD_WEIGHT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Encoding dimension D.
    pub input_dim: usize,
    pub fc_width: usize,
    pub fc_blocks: usize,
    pub fc_expansion: usize,
}

impl PredictorConfig {
    pub fn desk(input_dim: usize) -> Self {
        Self {
            input_dim,
            fc_width: 128,
            fc_blocks: 2,
            fc_expansion: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub nca: NcaConfig,
    input: Dense,
    blocks: Vec<ResidualBlock>,
    head: Dense,
}

impl Predictor {
    /// The head emits exactly `nca.param_count()` values.
    ///
    /// Rows of the head that feed the second update layer (`w2`, `b2`) start
    /// at zero, so a fresh model leaves the seed grid unchanged. Rows that
    /// feed the first layer start random: with them at zero too, the hidden
    /// activations would be zero and neither layer could ever receive a
    /// gradient.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        config: PredictorConfig,
        nca: NcaConfig,
        trainable_leaks: bool,
    ) -> Result<Self> {
        nca.validate()?;
        if config.input_dim == 0 || config.fc_width == 0 || config.fc_expansion == 0 {
            return Err(NcamError::Config("predictor widths must be positive".into()));
        }
        let f = config.fc_width;
        let input = Dense::new(store, rng, "predictor.input", config.input_dim, f, Init::Lecun);
        let blocks = (0..config.fc_blocks)
            .map(|i| {
                ResidualBlock::new(
                    store,
                    rng,
                    &format!("predictor.fc{i}"),
                    BlockSpec::fcb(f, config.fc_expansion),
                    trainable_leaks,
                )
            })
            .collect();
        let head = Dense::new(store, rng, "predictor.head", f, nca.param_count(), Init::Zeros);
        let [w1, b1, _, _] = nca.param_layout();
        let first_layer = w1.1 + b1.1;
        {
            let w = &mut store.get_mut(head.weight).value;
            let rows = uniform(rng, &[first_layer, f], HEAD_WEIGHT_SCALE * (3.0 / f as f64).sqrt());
            w.data_mut()[..first_layer * f].copy_from_slice(rows.data());
        }
        {
            // Bias rows for w1 act as a shared starting kernel with He scale
            // for a fan-in of 3·channels.
            let b = &mut store.get_mut(head.bias).value;
            let bound = (6.0 / nca.perception_channels() as f64).sqrt();
            let w1_bias = uniform(rng, &[w1.1], bound);
            b.data_mut()[..w1.1].copy_from_slice(w1_bias.data());
        }
        Ok(Self {
            config,
            nca,
            input,
            blocks,
            head,
        })
    }

    pub fn output_len(&self) -> usize {
        self.nca.param_count()
    }

    /// Flat kernel vector for an encoding of shape (D).
    pub fn forward_flat<T: Real>(&self, g: &mut Graph<T>, p: &Bound, e: Var) -> Result<Var> {
        if g.shape(e) != [self.config.input_dim] {
            return Err(NcamError::Precondition(format!(
                "predictor expects an encoding of shape [{}], got {:?}",
                self.config.input_dim,
                g.shape(e)
            )));
        }
        let mut h = self.input.forward(g, p, e)?;
        for block in &self.blocks {
            h = block.forward(g, p, h)?;
        }
        self.head.forward(g, p, h)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, e: Var) -> Result<NcaParams> {
        let flat = self.forward_flat(g, p, e)?;
        NcaParams::from_flat(g, flat, &self.nca)
    }

    /// The raw head bias, i.e. the kernels predicted for a zero hidden state.
    pub fn head_bias<'a>(&self, store: &'a ParamStore) -> &'a Tensor<f32> {
        &store.get(self.head.bias).value
    }
}
