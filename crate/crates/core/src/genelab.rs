//! Gene splicing: average the DNA of a group of images, keep the letters the
//! group agrees on, and overwrite those letters in a target's DNA.

use ncam_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dna::{DnaEncoding, CATEGORIES};
use crate::error::{NcamError, Result};
use crate::model::{ForwardOptions, Ncam};

/// Thresholded group mean. Every row is one-hot ("asserted") or all zero
/// ("none").
#[derive(Clone, Debug, PartialEq)]
pub struct MeanEncoding {
    pub dna: DnaEncoding,
    pub tau: f64,
    pub asserted: usize,
}

impl MeanEncoding {
    pub fn is_asserted(&self, row: usize) -> bool {
        !DnaEncoding::is_none_row(self.dna.row(row))
    }
}

/// Averages the letter rows of `sources` and asserts a category where its
/// average share reaches `tau` and is a strict majority (above 0.5), so no
/// row can assert two categories. Sources are projected to one-hot first
/// unless `soft` is set.
pub fn mean_encoding(sources: &[DnaEncoding], tau: f64, soft: bool) -> Result<MeanEncoding> {
    let first = sources
        .first()
        .ok_or_else(|| NcamError::Precondition("mean encoding needs at least one source".into()))?;
    if !(tau > 0.25 && tau <= 1.0) {
        return Err(NcamError::Precondition(format!("threshold {tau} is outside (0.25, 1]")));
    }
    let dim = first.dim();
    if let Some(bad) = sources.iter().find(|s| s.dim() != dim) {
        return Err(NcamError::Precondition(format!(
            "sources mix D={dim} and D={}",
            bad.dim()
        )));
    }
    let projected: Vec<DnaEncoding> = if soft {
        sources.to_vec()
    } else {
        sources.iter().map(DnaEncoding::discretize).collect()
    };
    let n = projected.len() as f64;
    let rows = first.rows();
    let mut out = Tensor::zeros(first.probs.shape());
    let mut asserted = 0;
    for r in 0..rows {
        let mut avg = [0f64; CATEGORIES];
        for s in &projected {
            for (a, &v) in avg.iter_mut().zip(s.row(r)) {
                *a += v as f64;
            }
        }
        avg.iter_mut().for_each(|a| *a /= n);
        let (best, share) = avg
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        if share >= tau && share > 0.5 {
            out.data_mut()[r * CATEGORIES + best] = 1.0;
            asserted += 1;
        }
    }
    Ok(MeanEncoding {
        dna: DnaEncoding::new(out)?,
        tau,
        asserted,
    })
}

/// Replaces the target's rows wherever the mean asserts a category.
pub fn splice(target: &DnaEncoding, mean: &MeanEncoding) -> Result<DnaEncoding> {
    if target.dim() != mean.dna.dim() {
        return Err(NcamError::Precondition(format!(
            "target has D={} but the mean has D={}",
            target.dim(),
            mean.dna.dim()
        )));
    }
    let mut out = target.clone();
    for r in 0..target.rows() {
        if mean.is_asserted(r) {
            out.probs.data_mut()[r * CATEGORIES..][..CATEGORIES].copy_from_slice(mean.dna.row(r));
        }
    }
    Ok(out)
}

/// Structured description of one splice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpliceRecipe {
    pub source_ids: Vec<usize>,
    pub tau: f64,
    pub target_id: usize,
    /// Average soft probabilities instead of one-hot letters.
    #[serde(default)]
    pub soft: bool,
}

/// One-hot DNA of a dataset image.
pub fn discrete_dna(model: &Ncam, data: &Dataset, id: usize) -> Result<DnaEncoding> {
    Ok(model.dna_of_image(&data.get(id)?.image)?.discretize())
}

/// Group mean of dataset images.
pub fn mean_of_ids(model: &Ncam, data: &Dataset, ids: &[usize], tau: f64, soft: bool) -> Result<MeanEncoding> {
    let sources = ids
        .iter()
        .map(|&id| {
            let dna = model.dna_of_image(&data.get(id)?.image)?;
            Ok(if soft { dna } else { dna.discretize() })
        })
        .collect::<Result<Vec<_>>>()?;
    mean_encoding(&sources, tau, soft)
}

pub struct SpliceOutcome {
    pub mean: MeanEncoding,
    pub spliced: DnaEncoding,
    pub image: Tensor<f32>,
    pub frames: Vec<Tensor<f32>>,
}

/// Runs a recipe end to end and grows the spliced code.
pub fn run_recipe(model: &Ncam, data: &Dataset, recipe: &SpliceRecipe, opts: &ForwardOptions) -> Result<SpliceOutcome> {
    let mean = mean_of_ids(model, data, &recipe.source_ids, recipe.tau, recipe.soft)?;
    let target = discrete_dna(model, data, recipe.target_id)?;
    let spliced = splice(&target, &mean)?;
    let (image, frames) = model.grow_from_dna(&spliced, opts)?;
    Ok(SpliceOutcome {
        mean,
        spliced,
        image,
        frames,
    })
}
