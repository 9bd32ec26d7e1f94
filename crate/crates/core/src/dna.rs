//! Categorical "DNA" codec.
//!
//! Every feature of a continuous encoding is expanded, in isolation and by
//! weights shared across features, into a gene of 16 letters, each letter a
//! distribution over the four categories C, G, A, T. The decoder mirrors
//! the encoder. A letter row of all zeros ("none") contributes nothing to
//! the decoder input.

use std::fmt;
use std::str::FromStr;

use ncam_autodiff::{Graph, Real, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NcamError, Result};
use crate::layers::{BlockSpec, Dense, Init, ResidualBlock};
use crate::nca::NORM_EPSILON;
use crate::params::{Bound, ParamId, ParamKind, ParamStore};

/// Letters per gene.
pub const GENE_LEN: usize = 16;
/// Categories per letter.
pub const CATEGORIES: usize = 4;
/// Category symbols in index order.
pub const ALPHABET: [char; CATEGORIES] = ['C', 'G', 'A', 'T'];
/// Default width of the per-feature residual stacks.
pub const DEFAULT_CODEC_WIDTH: usize = 64;
/// Residual blocks on each side of the codec.
pub const CODEC_DEPTH: usize = 4;
/// Header line prefix of the letter export format.
pub const EXPORT_HEADER: &str = "NCAM-DNA v1 D=";

#[derive(Clone, Debug)]
pub struct DnaCodec {
    pub dim: usize,
    enc_in: Dense,
    enc_blocks: Vec<ResidualBlock>,
    enc_out: Dense,
    /// Letter projection of the decoder; it has no bias, since the
    /// normalization that follows would cancel it.
    dec_proj: ParamId,
    dec_blocks: Vec<ResidualBlock>,
    dec_out: Dense,
}

impl DnaCodec {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dim: usize, width: usize, trainable_leaks: bool) -> Self {
        let letters = GENE_LEN * CATEGORIES;
        let mut stack = |side: &str, rng: &mut _| -> Vec<ResidualBlock> {
            (0..CODEC_DEPTH)
                .map(|i| {
                    ResidualBlock::new(
                        store,
                        rng,
                        &format!("dna.{side}{i}"),
                        BlockSpec::cb1(width),
                        trainable_leaks,
                    )
                })
                .collect()
        };
        let enc_blocks = stack("enc", rng);
        let dec_blocks = stack("dec", rng);
        let enc_out = Dense::new(store, rng, "dna.enc_out", width, letters, Init::Lecun);
        Self {
            dim,
            enc_in: Dense::new(store, rng, "dna.enc_in", 1, width, Init::Lecun),
            enc_blocks,
            enc_out,
            dec_proj: store.add(
                "dna.dec_proj.weight",
                Init::Lecun.tensor(rng, &[width, letters], letters),
                ParamKind::Weight,
            ),
            dec_blocks,
            dec_out: Dense::new(store, rng, "dna.dec_out", width, 1, Init::Lecun),
        }
    }

    /// (D) encoding → (D, 16, 4) letter probabilities.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, p: &Bound, e: Var) -> Result<Var> {
        if g.shape(e) != [self.dim] {
            return Err(NcamError::Precondition(format!(
                "DNA encoder expects an encoding of shape [{}], got {:?}",
                self.dim,
                g.shape(e)
            )));
        }
        let rows = g.reshape(e, &[self.dim, 1])?;
        let mut h = self.enc_in.forward(g, p, rows)?;
        for block in &self.enc_blocks {
            h = block.forward(g, p, h)?;
        }
        let logits = self.enc_out.forward(g, p, h)?;
        let logits = g.reshape(logits, &[self.dim, GENE_LEN, CATEGORIES])?;
        Ok(g.softmax_lastdim(logits))
    }

    /// (D, 16, 4) letters → (D) encoding.
    pub fn decode<T: Real>(&self, g: &mut Graph<T>, p: &Bound, dna: Var) -> Result<Var> {
        if g.shape(dna) != [self.dim, GENE_LEN, CATEGORIES] {
            return Err(NcamError::Precondition(format!(
                "DNA decoder expects shape [{}, {GENE_LEN}, {CATEGORIES}], got {:?}",
                self.dim,
                g.shape(dna)
            )));
        }
        // Center every letter on the uniform distribution (a "none" row stays
        // zero), so a randomly replaced letter contributes nothing on average
        // and mutation only shrinks the projected signal of a gene. The
        // projection is then normalized per gene, which removes that shrink:
        // the decoder sees the same scale however many letters were mutated.
        let letters = g.reshape(dna, &[self.dim * GENE_LEN, CATEGORIES])?;
        let centering = g.constant(Tensor::from_fn(&[CATEGORIES, CATEGORIES], |i| {
            let diag = if i / CATEGORIES == i % CATEGORIES { T::one() } else { T::zero() };
            diag - T::lit(1.0 / CATEGORIES as f64)
        }));
        let centered = g.dense(letters, centering, None)?;
        let rows = g.reshape(centered, &[self.dim, GENE_LEN * CATEGORIES])?;
        let projected = g.dense(rows, p.get(self.dec_proj), None)?;
        let mut h = g.instance_norm(projected, T::lit(NORM_EPSILON))?;
        for block in &self.dec_blocks {
            h = block.forward(g, p, h)?;
        }
        let out = self.dec_out.forward(g, p, h)?;
        Ok(g.reshape(out, &[self.dim])?)
    }
}

/// A drawn mutation: which letter rows are replaced and by which category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mutation {
    /// `(row, category)` pairs, rows in increasing order.
    pub replaced: Vec<(usize, usize)>,
    pub rows: usize,
}

impl Mutation {
    /// Picks `floor(rate · rows)` distinct rows uniformly at random and a
    /// uniformly random category for each.
    pub fn sample(rng: &mut impl Rng, rows: usize, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(NcamError::Precondition(format!("mutation rate {rate} is outside [0, 1]")));
        }
        let count = ((rate * rows as f64).floor() as usize).min(rows);
        let mut picked = sample(rng, rows, count).into_vec();
        picked.sort_unstable();
        let replaced = picked
            .into_iter()
            .map(|r| (r, rng.gen_range(0..CATEGORIES)))
            .collect();
        Ok(Self { replaced, rows })
    }

    pub fn from_seed(seed: u64, rows: usize, rate: f64) -> Result<Self> {
        Self::sample(&mut ChaCha8Rng::seed_from_u64(seed), rows, rate)
    }

    /// Keep-mask and one-hot replacement tensors, both (rows·4).
    fn masks<T: Real>(&self) -> (Vec<T>, Vec<T>) {
        let mut keep = vec![T::one(); self.rows * CATEGORIES];
        let mut repl = vec![T::zero(); self.rows * CATEGORIES];
        for &(r, c) in &self.replaced {
            keep[r * CATEGORIES..][..CATEGORIES].iter_mut().for_each(|v| *v = T::zero());
            repl[r * CATEGORIES + c] = T::one();
        }
        (keep, repl)
    }

    /// Applies to a graph value; the replacement is a constant, so gradients
    /// only pass through the kept rows.
    pub fn apply_graph<T: Real>(&self, g: &mut Graph<T>, dna: Var) -> Result<Var> {
        let shape = g.shape(dna).to_vec();
        if shape.iter().product::<usize>() != self.rows * CATEGORIES {
            return Err(NcamError::Precondition(format!(
                "mutation drawn for {} rows cannot apply to shape {shape:?}",
                self.rows
            )));
        }
        if self.replaced.is_empty() {
            return Ok(dna);
        }
        let (keep, repl) = self.masks::<T>();
        let keep = g.constant(Tensor::new(&shape, keep)?);
        let repl = g.constant(Tensor::new(&shape, repl)?);
        let kept = g.mul(dna, keep)?;
        Ok(g.add(kept, repl)?)
    }

    pub fn apply(&self, dna: &DnaEncoding) -> Result<DnaEncoding> {
        if dna.rows() != self.rows {
            return Err(NcamError::Precondition(format!(
                "mutation drawn for {} rows cannot apply to {} rows",
                self.rows,
                dna.rows()
            )));
        }
        let mut out = dna.clone();
        for &(r, c) in &self.replaced {
            let row = &mut out.probs.data_mut()[r * CATEGORIES..][..CATEGORIES];
            row.iter_mut().enumerate().for_each(|(i, v)| *v = if i == c { 1.0 } else { 0.0 });
        }
        Ok(out)
    }
}

/// Letter probabilities of shape (D, 16, 4), outside any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DnaEncoding {
    pub probs: Tensor<f32>,
}

impl DnaEncoding {
    pub fn new(probs: Tensor<f32>) -> Result<Self> {
        let s = probs.shape();
        if s.len() != 3 || s[1] != GENE_LEN || s[2] != CATEGORIES {
            return Err(NcamError::Precondition(format!(
                "DNA encodings have shape [D, {GENE_LEN}, {CATEGORIES}], got {s:?}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn dim(&self) -> usize {
        self.probs.shape()[0]
    }

    /// Number of letter rows, `D · 16`.
    pub fn rows(&self) -> usize {
        self.dim() * GENE_LEN
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.probs.data()[r * CATEGORIES..][..CATEGORIES]
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(row: &[f32]) -> usize {
        let mut best = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_none_row(row: &[f32]) -> bool {
        row.iter().all(|&v| v == 0.0)
    }

    /// One-hot projection of every row; "none" rows stay all-zero.
    pub fn discretize(&self) -> Self {
        let mut out = Tensor::zeros(self.probs.shape());
        for r in 0..self.rows() {
            let row = self.row(r);
            if !Self::is_none_row(row) {
                out.data_mut()[r * CATEGORIES + Self::argmax(row)] = 1.0;
            }
        }
        Self { probs: out }
    }

    /// `D · 16` letters from C, G, A, T; "none" rows are written as `N`.
    pub fn to_letters(&self) -> String {
        (0..self.rows())
            .map(|r| {
                let row = self.row(r);
                if Self::is_none_row(row) {
                    'N'
                } else {
                    ALPHABET[Self::argmax(row)]
                }
            })
            .collect()
    }

    /// One-hot encoding of a letter string (`N` gives a "none" row).
    pub fn from_letters(letters: &str) -> Result<Self> {
        let chars: Vec<char> = letters.chars().collect();
        if chars.is_empty() || chars.len() % GENE_LEN != 0 {
            return Err(NcamError::Malformed {
                context: "DNA letters".into(),
                offset: chars.len() as u64,
                msg: format!("length {} is not a positive multiple of {GENE_LEN}", chars.len()),
            });
        }
        let dim = chars.len() / GENE_LEN;
        let mut probs = Tensor::zeros(&[dim, GENE_LEN, CATEGORIES]);
        for (r, ch) in chars.iter().enumerate() {
            if *ch == 'N' {
                continue;
            }
            let c = ALPHABET.iter().position(|a| a == ch).ok_or_else(|| NcamError::Malformed {
                context: "DNA letters".into(),
                offset: r as u64,
                msg: format!("unexpected letter {ch:?}"),
            })?;
            probs.data_mut()[r * CATEGORIES + c] = 1.0;
        }
        Ok(Self { probs })
    }

    /// Header line plus letters, newline-terminated.
    pub fn export(&self) -> String {
        format!("{EXPORT_HEADER}{}\n{}\n", self.dim(), self.to_letters())
    }

    pub fn parse_export(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let dim: usize = header
            .strip_prefix(EXPORT_HEADER)
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(|| NcamError::Malformed {
                context: "DNA export".into(),
                offset: 0,
                msg: format!("expected header \"{EXPORT_HEADER}<D>\""),
            })?;
        let letters = lines.next().unwrap_or_default().trim();
        let dna = Self::from_letters(letters)?;
        if dna.dim() != dim {
            return Err(NcamError::Malformed {
                context: "DNA export".into(),
                offset: header.len() as u64 + 1,
                msg: format!("header declares D={dim} but {} letters follow", letters.len()),
            });
        }
        Ok(dna)
    }
}

impl fmt::Display for DnaEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_letters())
    }
}

impl FromStr for DnaEncoding {
    type Err = NcamError;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_letters(s.trim())
    }
}
