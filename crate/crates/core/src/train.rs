//! Training by backpropagation through the whole growth, and evaluation.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ncam_autodiff::{Graph, Real, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, DatasetSpec};
use crate::error::{NcamError, Result};
use crate::model::{EncodingMode, ForwardOptions, Ncam};
use crate::optim::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Fraction of DNA letters replaced during training (DNA mode only).
    pub mutation_rate: f64,
    /// Seed of batch sampling, mutation draws and update masks.
    pub seed: u64,
    /// Composite RGBA over a white background before the loss.
    pub composite_white: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 8,
            mutation_rate: 0.5,
            seed: 0,
            composite_white: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NcamError::Config("batch size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(NcamError::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(NcamError::Config("mutation rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `rgb + (1 - alpha)` per color channel, alpha kept, for premultiplied
/// RGBA; other images pass through.
pub fn composite_over_white<T: Real>(g: &mut Graph<T>, image: Var) -> Result<Var> {
    let s = g.shape(image).to_vec();
    if s.len() != 3 || s[0] != 4 {
        return Ok(image);
    }
    let rgb = g.narrow(image, 0, 3)?;
    let alpha = g.narrow(image, 3, 1)?;
    let ones = g.constant(Tensor::ones(&[1, s[1], s[2]]));
    let background = g.sub(ones, alpha)?;
    let background = g.concat(&[background, background, background])?;
    let rgb = g.add(rgb, background)?;
    Ok(g.concat(&[rgb, alpha])?)
}

/// Mean squared error between a grown image and its target.
pub fn image_loss<T: Real>(g: &mut Graph<T>, output: Var, target: Var, composite_white: bool) -> Result<Var> {
    if composite_white {
        let o = composite_over_white(g, output)?;
        let t = composite_over_white(g, target)?;
        Ok(g.mse(o, t)?)
    } else {
        Ok(g.mse(output, target)?)
    }
}

/// Reconstruction MSE of one image without any training graph.
pub fn image_mse(model: &Ncam, image: &Tensor<f32>, opts: &ForwardOptions, composite_white: bool) -> Result<f64> {
    model.check_image(image)?;
    let mut g = Graph::<f32>::no_grad();
    let p = model.bind(&mut g);
    let x = g.constant(image.clone());
    let r = model.reconstruct(&mut g, &p, x, opts)?;
    let loss = image_loss(&mut g, r.image, x, composite_white)?;
    Ok(g.value(loss).data()[0] as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lf_nca: f32,
}

pub struct Trainer {
    pub model: Ncam,
    pub config: TrainConfig,
    pub adam: Adam,
    /// Completed optimizer steps.
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub dataset: Option<DatasetSpec>,
}

impl Trainer {
    pub fn new(model: Ncam, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(config.adam.clone(), &model.store);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            config,
            adam,
            step: 0,
            rng,
            dataset: None,
        })
    }

    /// Resumes from a checkpoint that carries training state.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let state = ckpt
            .train
            .ok_or_else(|| NcamError::Precondition("checkpoint has no training state".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(state.config.seed);
        rng.set_word_pos(state.rng_word_pos);
        Ok(Self {
            model: ckpt.model,
            config: state.config,
            adam: state.adam,
            step: state.step,
            rng,
            dataset: ckpt.dataset,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::with_training(
            self.model.clone(),
            self.config.clone(),
            self.adam.clone(),
            self.step,
            self.rng.get_word_pos(),
            self.dataset.clone(),
        )
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(NcamError::EmptyDataset);
        }
        let c = &self.model.config;
        if (data.visible, data.height, data.width) != (c.nca.visible, c.height, c.width) {
            return Err(NcamError::Precondition(format!(
                "dataset images are {}x{}x{} but the model expects {}x{}x{}",
                data.visible, data.height, data.width, c.nca.visible, c.height, c.width
            )));
        }
        Ok(())
    }

    /// Item indices of the next batch: the whole dataset when it fits,
    /// otherwise a uniform sample without replacement.
    fn next_batch(&mut self, len: usize) -> Vec<usize> {
        if len <= self.config.batch_size {
            (0..len).collect()
        } else {
            sample(&mut self.rng, len, self.config.batch_size).into_vec()
        }
    }

    /// One optimizer step. A non-finite loss aborts before any weight is
    /// touched.
    pub fn step_once(&mut self, data: &Dataset) -> Result<StepStats> {
        self.check_dataset(data)?;
        let batch = self.next_batch(data.len());
        let dna = self.model.config.mode == EncodingMode::Dna;
        let mut g = Graph::<f32>::new();
        let p = self.model.bind(&mut g);
        let mut total: Option<Var> = None;
        for &i in &batch {
            let opts = ForwardOptions {
                mutation_rate: if dna { self.config.mutation_rate } else { 0.0 },
                mutation_seed: self.rng.gen(),
                nca_seed: self.rng.gen(),
                ..ForwardOptions::default()
            };
            let target = g.constant(data.items[i].image.clone());
            let r = self.model.reconstruct(&mut g, &p, target, &opts)?;
            let loss = image_loss(&mut g, r.image, target, self.config.composite_white)?;
            total = Some(match total {
                Some(t) => g.add(t, loss)?,
                None => loss,
            });
        }
        let total = total.ok_or(NcamError::EmptyDataset)?;
        let loss = g.scale(total, 1.0 / batch.len() as f32);
        let loss_value = g.value(loss).data()[0] as f64;
        if !loss_value.is_finite() {
            return Err(NcamError::Diverged { step: self.step });
        }
        g.backward(loss)?;
        let grads: Vec<Option<Vec<f32>>> = p.vars().iter().map(|&v| g.grad(v).map(<[f32]>::to_vec)).collect();
        let grad_norm = self.adam.step(&mut self.model.store, &grads)?;
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            loss: loss_value,
            grad_norm,
            lf_nca: self.model.nca_leak_value(),
        })
    }

    /// Runs `steps` optimizer steps, appending `step,loss,lf_nca,wallclock_ms`
    /// lines to `log` and saving a checkpoint to `ckpt` every
    /// `checkpoint_every` steps and at the end. On divergence the last
    /// written checkpoint is left in place.
    pub fn run(
        &mut self,
        data: &Dataset,
        steps: u64,
        mut log: Option<&mut dyn Write>,
        ckpt: Option<(&Path, u64)>,
    ) -> Result<Vec<StepStats>> {
        let start = Instant::now();
        let mut history = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let stats = self.step_once(data)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    stats.step,
                    stats.loss,
                    stats.lf_nca,
                    start.elapsed().as_millis()
                )
                .map_err(|e| NcamError::io("<metrics log>", e))?;
            }
            if let Some((path, every)) = ckpt {
                if every > 0 && stats.step % every == 0 {
                    self.checkpoint().save(path)?;
                }
            }
            history.push(stats);
        }
        if let Some((path, _)) = ckpt {
            self.checkpoint().save(path)?;
        }
        Ok(history)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Repetitions with different update-mask / mutation seeds. Ignored
    /// (one run) when the model and options are deterministic.
    pub seeds: usize,
    pub mutation_rate: f64,
    /// Decode the one-hot projection of the DNA instead of the soft code.
    pub discretize: bool,
    pub seed: u64,
    pub composite_white: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seeds: 5,
            mutation_rate: 0.0,
            discretize: false,
            seed: 0,
            composite_white: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: usize,
    pub mse: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageScore>,
    /// Mean over images and seeds.
    pub mean: f64,
    /// Standard deviation of the per-seed dataset means.
    pub sd: f64,
    pub seeds: usize,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Reconstruction MSE of every dataset image.
pub fn evaluate(model: &Ncam, data: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(NcamError::EmptyDataset);
    }
    let dna = model.config.mode == EncodingMode::Dna;
    let random = !model.config.nca.is_synchronous() || (dna && opts.mutation_rate > 0.0);
    let seeds = if random { opts.seeds.max(1) } else { 1 };
    let mut per_seed: Vec<Vec<f64>> = Vec::with_capacity(seeds);
    for s in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(s as u64));
        let scores = data
            .items
            .iter()
            .map(|it| {
                let fo = ForwardOptions {
                    mutation_rate: if dna { opts.mutation_rate } else { 0.0 },
                    mutation_seed: rng.gen(),
                    nca_seed: rng.gen(),
                    discretize: dna && opts.discretize,
                    frames_every: None,
                };
                image_mse(model, &it.image, &fo, opts.composite_white)
            })
            .collect::<Result<Vec<_>>>()?;
        per_seed.push(scores);
    }
    let per_image = data
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let xs: Vec<f64> = per_seed.iter().map(|s| s[i]).collect();
            let (mse, sd) = mean_sd(&xs);
            ImageScore { id: it.id, mse, sd }
        })
        .collect();
    let dataset_means: Vec<f64> = per_seed.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
    let (mean, sd) = mean_sd(&dataset_means);
    Ok(EvalReport {
        per_image,
        mean,
        sd,
        seeds,
    })
}
