//! The full model: encoder → (optional DNA round trip) → parameter
//! predictor → automaton growth from a seed.

use ncam_autodiff::{Graph, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dna::{DnaCodec, DnaEncoding, Mutation, DEFAULT_CODEC_WIDTH};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{NcamError, Result};
use crate::nca::{self, NcaConfig, NcaParams};
use crate::params::{Bound, ParamId, ParamStore};
use crate::predictor::{Predictor, PredictorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    /// The predictor consumes the continuous encoding directly.
    Continuous,
    /// The encoding passes through the DNA codec first.
    Dna,
}

fn default_codec_width() -> usize {
    DEFAULT_CODEC_WIDTH
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nca: NcaConfig,
    pub encoder: EncoderConfig,
    pub predictor: PredictorConfig,
    pub mode: EncodingMode,
    /// Width of the DNA codec's per-gene residual stacks.
    #[serde(default = "default_codec_width")]
    pub codec_width: usize,
    /// Train the leak factors; when false every leak factor is frozen at 1.
    pub leak_factors: bool,
    pub height: usize,
    pub width: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Small configuration suitable for a CPU: 16 channels, hidden width
    /// 32, 32 steps, synchronous updates.
    pub fn desk(visible: usize, height: usize, width: usize, dim: usize, mode: EncodingMode) -> Self {
        Self {
            nca: NcaConfig::desk(visible),
            encoder: EncoderConfig::desk(visible, dim),
            predictor: PredictorConfig::desk(dim),
            mode,
            codec_width: DEFAULT_CODEC_WIDTH,
            leak_factors: true,
            height,
            width,
            init_seed: 0,
        }
    }

    /// Larger configuration: hidden width 128, 64 steps, D = 512 and
    /// 512-wide FC blocks.
    pub fn large(visible: usize, height: usize, width: usize, mode: EncodingMode) -> Self {
        let dim = 512;
        let mut c = Self::desk(visible, height, width, dim, mode);
        c.nca.hidden = 128;
        c.nca.steps = 64;
        c.encoder.fc_width = 512;
        c.predictor.fc_width = 512;
        c
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim
    }

    pub fn validate(&self) -> Result<()> {
        self.nca.validate()?;
        self.encoder.validate()?;
        if self.encoder.input_channels != self.nca.visible {
            return Err(NcamError::Config(format!(
                "encoder reads {} channels but the automaton shows {}",
                self.encoder.input_channels, self.nca.visible
            )));
        }
        if self.predictor.input_dim != self.encoder.dim {
            return Err(NcamError::Config(format!(
                "predictor expects D={} but the encoder emits D={}",
                self.predictor.input_dim, self.encoder.dim
            )));
        }
        if self.codec_width == 0 {
            return Err(NcamError::Config("DNA codec width must be positive".into()));
        }
        if self.height < 3 || self.width < 3 {
            return Err(NcamError::Config("images must be at least 3x3".into()));
        }
        Ok(())
    }
}

/// Per-call options of a reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOptions {
    /// Fraction of DNA letters replaced (DNA mode only).
    pub mutation_rate: f64,
    pub mutation_seed: u64,
    /// Seed of the stochastic update masks.
    pub nca_seed: u64,
    pub frames_every: Option<usize>,
    /// Replace the soft DNA by its one-hot projection before decoding.
    pub discretize: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            mutation_rate: 0.0,
            mutation_seed: 0,
            nca_seed: 0,
            frames_every: None,
            discretize: false,
        }
    }
}

pub struct Reconstruction<T> {
    pub encoding: Var,
    /// DNA actually decoded (after mutation / discretization).
    pub dna: Option<Var>,
    pub params: NcaParams,
    /// Final visible channels, (V, H, W).
    pub image: Var,
    pub frames: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Ncam {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub codec: Option<DnaCodec>,
    pub predictor: Predictor,
    pub nca_leak: ParamId,
}

impl Ncam {
    /// Builds a freshly initialized model; the initialization depends only
    /// on the configuration (including `init_seed`).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let lf = config.leak_factors;
        let encoder = Encoder::new(&mut store, &mut rng, config.encoder.clone(), config.height, config.width, lf)?;
        let codec = match config.mode {
            EncodingMode::Dna => Some(DnaCodec::new(&mut store, &mut rng, config.dim(), config.codec_width, lf)),
            EncodingMode::Continuous => None,
        };
        let predictor = Predictor::new(&mut store, &mut rng, config.predictor.clone(), config.nca.clone(), lf)?;
        let nca_leak = store.add_leak("nca.leak", lf);
        Ok(Self {
            config,
            store,
            encoder,
            codec,
            predictor,
            nca_leak,
        })
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>) -> Bound {
        self.store.bind(g)
    }

    pub fn nca_leak_value(&self) -> f32 {
        self.store.get(self.nca_leak).value.data()[0]
    }

    fn codec(&self) -> Result<&DnaCodec> {
        self.codec
            .as_ref()
            .ok_or_else(|| NcamError::Precondition("model was not trained with DNA encodings".into()))
    }

    pub fn check_image<T: Real>(&self, image: &Tensor<T>) -> Result<()> {
        let expected = [self.config.nca.visible, self.config.height, self.config.width];
        if image.shape() != expected {
            return Err(NcamError::Precondition(format!(
                "model expects images of shape {expected:?}, got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Grows an image from an encoding of shape (D) already on the graph.
    pub fn grow_from_encoding<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        encoding: Var,
        opts: &ForwardOptions,
    ) -> Result<(NcaParams, Var, Vec<Tensor<T>>)> {
        let params = self.predictor.forward(g, p, encoding)?;
        let cfg = &self.config.nca;
        let growth = nca::grow(
            g,
            &params,
            p.get(self.nca_leak),
            cfg,
            self.config.height,
            self.config.width,
            opts.nca_seed,
            opts.frames_every,
        )?;
        let image = nca::visible(g, growth.grid.state, cfg)?;
        Ok((params, image, growth.frames))
    }

    /// Decodes (D, 16, 4) letters on the graph and grows the image.
    pub fn grow_from_dna_var<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        dna: Var,
        opts: &ForwardOptions,
    ) -> Result<(Var, NcaParams, Var, Vec<Tensor<T>>)> {
        let encoding = self.codec()?.decode(g, p, dna)?;
        let (params, image, frames) = self.grow_from_encoding(g, p, encoding, opts)?;
        Ok((encoding, params, image, frames))
    }

    /// Full forward pass for one (V, H, W) image.
    pub fn reconstruct<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        image: Var,
        opts: &ForwardOptions,
    ) -> Result<Reconstruction<T>> {
        let encoding = self.encoder.forward(g, p, image)?;
        match self.config.mode {
            EncodingMode::Continuous => {
                let (params, image, frames) = self.grow_from_encoding(g, p, encoding, opts)?;
                Ok(Reconstruction {
                    encoding,
                    dna: None,
                    params,
                    image,
                    frames,
                })
            }
            EncodingMode::Dna => {
                let codec = self.codec()?;
                let mut dna = codec.encode(g, p, encoding)?;
                if opts.discretize {
                    let soft = DnaEncoding::new(g.value(dna).cast())?;
                    dna = g.constant(soft.discretize().probs.cast());
                }
                if opts.mutation_rate > 0.0 {
                    let m = Mutation::from_seed(opts.mutation_seed, codec.dim * crate::dna::GENE_LEN, opts.mutation_rate)?;
                    dna = m.apply_graph(g, dna)?;
                }
                let (_, params, image, frames) = self.grow_from_dna_var(g, p, dna, opts)?;
                Ok(Reconstruction {
                    encoding,
                    dna: Some(dna),
                    params,
                    image,
                    frames,
                })
            }
        }
    }

    /// Inference-only reconstruction of a stored image.
    pub fn reconstruct_image(&self, image: &Tensor<f32>, opts: &ForwardOptions) -> Result<(Tensor<f32>, Vec<Tensor<f32>>)> {
        self.check_image(image)?;
        let mut g = Graph::<f32>::no_grad();
        let p = self.bind(&mut g);
        let x = g.constant(image.clone());
        let r = self.reconstruct(&mut g, &p, x, opts)?;
        Ok((g.value(r.image).clone(), r.frames))
    }

    /// Continuous encoding of an image.
    pub fn encode_image(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_image(image)?;
        let mut g = Graph::<f32>::no_grad();
        let p = self.bind(&mut g);
        let x = g.constant(image.clone());
        let e = self.encoder.forward(&mut g, &p, x)?;
        Ok(g.value(e).clone())
    }

    /// Soft DNA of an image (DNA-mode models only).
    pub fn dna_of_image(&self, image: &Tensor<f32>) -> Result<DnaEncoding> {
        self.check_image(image)?;
        let codec = self.codec()?;
        let mut g = Graph::<f32>::no_grad();
        let p = self.bind(&mut g);
        let x = g.constant(image.clone());
        let e = self.encoder.forward(&mut g, &p, x)?;
        let dna = codec.encode(&mut g, &p, e)?;
        DnaEncoding::new(g.value(dna).clone())
    }

    /// Decodes a DNA encoding and grows the final visible image (plus frames
    /// on request).
    pub fn grow_from_dna(&self, dna: &DnaEncoding, opts: &ForwardOptions) -> Result<(Tensor<f32>, Vec<Tensor<f32>>)> {
        if dna.dim() != self.config.dim() {
            return Err(NcamError::Precondition(format!(
                "model expects D={} but the DNA has D={}",
                self.config.dim(),
                dna.dim()
            )));
        }
        let mut g = Graph::<f32>::no_grad();
        let p = self.bind(&mut g);
        let x = g.constant(dna.probs.clone());
        let (_, _, image, frames) = self.grow_from_dna_var(&mut g, &p, x, opts)?;
        Ok((g.value(image).clone(), frames))
    }

    /// Flat kernel vector predicted for a continuous encoding.
    pub fn predict_flat(&self, encoding: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::no_grad();
        let p = self.bind(&mut g);
        let e = g.constant(encoding.clone());
        let flat = self.predictor.forward_flat(&mut g, &p, e)?;
        Ok(g.value(flat).clone())
    }
}
