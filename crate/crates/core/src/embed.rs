//! Word vectors, the learned input transform, and input interval boxes.
//!
//! Each word w has a frozen pre-trained vector v_pre(w). Models see
//! φ(w) = relu(f_input(v_pre(w))) where f_input is a learned linear map;
//! putting the trainable transform *before* box construction is what lets
//! training orient the vectors so axis-aligned boxes fit them tightly.
//! Input boxes over a substitution set are the smallest axis-aligned box
//! containing every candidate's φ, optionally shrunk toward the original
//! word's φ by a factor epsilon.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::interval::IntervalTensor;
use crate::lexicon::{Vocabulary, WordId};
use crate::tensor::Tensor;

/// Frozen pre-trained vectors, vocabulary-aligned and flat.
#[derive(Debug, Clone)]
pub struct VectorStore {
    dim: usize,
    data: Vec<f64>,
}

impl VectorStore {
    pub fn new(dim: usize, vocab_size: usize) -> Self {
        VectorStore {
            dim,
            data: vec![0.0; dim * vocab_size],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, word: WordId) -> &[f64] {
        &self.data[word * self.dim..(word + 1) * self.dim]
    }

    pub fn set(&mut self, word: WordId, values: &[f64]) {
        self.data[word * self.dim..(word + 1) * self.dim].copy_from_slice(values);
    }

    /// Population standard deviation of every coordinate across the
    /// vocabulary.
    pub fn coordinate_stddevs(&self) -> Vec<f64> {
        let v = self.len();
        let mut mean = vec![0.0; self.dim];
        for w in 0..v {
            for (m, x) in mean.iter_mut().zip(self.vector(w)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= v as f64);
        let mut var = vec![0.0; self.dim];
        for w in 0..v {
            for j in 0..self.dim {
                let d = self.vector(w)[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter().map(|s| (s / v as f64).sqrt()).collect()
    }
}

/// The learned linear map applied to pre-trained vectors before the relu.
#[derive(Debug, Clone)]
pub struct InputTransform {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl InputTransform {
    pub fn identity(dim: usize) -> Self {
        let mut w = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            w.data_mut()[i * dim + i] = 1.0;
        }
        InputTransform {
            weight: w,
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// φ(w) = relu(f_input(v_pre(w))). Recomputed on demand; never cached
/// across optimizer steps since f_input is learning.
pub fn embed(transform: &InputTransform, store: &VectorStore, word: WordId) -> Tensor {
    let mut y = transform.weight.matvec(store.vector(word));
    for (yi, b) in y.iter_mut().zip(transform.bias.data()) {
        *yi += b;
    }
    y.iter_mut().for_each(|v| *v = v.max(0.0));
    Tensor::vector(y)
}

/// Smallest axis-aligned box containing φ(w) for every candidate word.
pub fn input_box(
    transform: &InputTransform,
    store: &VectorStore,
    candidates: &[WordId],
) -> Result<IntervalTensor> {
    if candidates.is_empty() {
        return Err(Error::Precondition("input_box over empty candidate set".into()));
    }
    let first = embed(transform, store, candidates[0]);
    let mut lo = first.data().to_vec();
    let mut hi = lo.clone();
    for &w in &candidates[1..] {
        let phi = embed(transform, store, w);
        for j in 0..lo.len() {
            lo[j] = lo[j].min(phi.data()[j]);
            hi[j] = hi[j].max(phi.data()[j]);
        }
    }
    IntervalTensor::from_bounds(lo, hi)
}

/// Interpolate a box toward its center: l' = c − eps(c − l),
/// u' = c + eps(u − c). eps = 0 collapses to the center point (standard
/// training); eps = 1 returns the box unchanged.
pub fn shrink_box(bounds: &IntervalTensor, center: &Tensor, eps: f64) -> Result<IntervalTensor> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Config(format!("epsilon {eps} outside [0, 1]")));
    }
    if center.shape() != bounds.shape() {
        return Err(Error::dimension(
            "shrink_box",
            format!("{:?}", bounds.shape()),
            format!("{:?}", center.shape()),
        ));
    }
    if eps == 0.0 {
        return Ok(IntervalTensor::point(center));
    }
    if eps == 1.0 {
        return Ok(bounds.clone());
    }
    let lo: Vec<f64> = center
        .data()
        .iter()
        .zip(bounds.lower().data())
        .map(|(&c, &l)| c - eps * (c - l))
        .collect();
    let hi: Vec<f64> = center
        .data()
        .iter()
        .zip(bounds.upper().data())
        .map(|(&c, &u)| c + eps * (u - c))
        .collect();
    IntervalTensor::from_bounds(lo, hi)
}

/// Normalized interval width around one word's neighborhood, in both the
/// pre-trained space and the transformed space.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundWidthRow {
    pub word: WordId,
    pub pre_width: f64,
    pub phi_width: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BoundWidthReport {
    pub rows: Vec<BoundWidthRow>,
    /// Coordinates skipped because the vocabulary-wide stddev was zero.
    pub skipped_coordinates: Vec<(String, usize)>,
    /// Fraction of rows where the transformed width is smaller.
    pub phi_tighter_fraction: f64,
}

/// Average interval width of each neighborhood box, per coordinate
/// normalized by the vocabulary-wide standard deviation of that
/// coordinate, then averaged over coordinates. Only words with more than
/// one neighbor are reported.
pub fn bound_width_diagnostic(
    vocab: &Vocabulary,
    table: &crate::lexicon::NeighborTable,
    transform: &InputTransform,
    store: &VectorStore,
) -> Result<BoundWidthReport> {
    let pre_sigma = store.coordinate_stddevs();
    // Stddevs of the transformed space, over the whole vocabulary.
    let phi_dim = transform.output_dim();
    let mut phi_store = VectorStore::new(phi_dim, vocab.len());
    for w in 0..vocab.len() {
        let phi = embed(transform, store, w);
        phi_store.set(w, phi.data());
    }
    let phi_sigma = phi_store.coordinate_stddevs();

    fn norm_width(
        lo: &[f64],
        hi: &[f64],
        sigma: &[f64],
        space: &str,
        skipped: &mut Vec<(String, usize)>,
    ) -> f64 {
        let mut total = 0.0;
        let mut used = 0usize;
        for j in 0..lo.len() {
            if sigma[j] == 0.0 {
                if !skipped.iter().any(|(s, c)| s == space && *c == j) {
                    skipped.push((space.to_string(), j));
                }
                continue;
            }
            total += (hi[j] - lo[j]) / sigma[j];
            used += 1;
        }
        if used == 0 {
            0.0
        } else {
            total / lo.len() as f64
        }
    }

    let mut report = BoundWidthReport::default();
    for w in 0..vocab.len() {
        let neighbors = table.neighbors(w);
        if neighbors.len() <= 1 {
            continue;
        }

        // Box around the neighborhood in pre-trained space.
        let mut pre_lo = store.vector(neighbors[0]).to_vec();
        let mut pre_hi = pre_lo.clone();
        for &nb in &neighbors[1..] {
            for (j, &x) in store.vector(nb).iter().enumerate() {
                pre_lo[j] = pre_lo[j].min(x);
                pre_hi[j] = pre_hi[j].max(x);
            }
        }
        let phi_box = input_box(transform, store, neighbors)?;

        let pre_width = norm_width(
            &pre_lo,
            &pre_hi,
            &pre_sigma,
            "pre",
            &mut report.skipped_coordinates,
        );
        let phi_width = norm_width(
            phi_box.lower().data(),
            phi_box.upper().data(),
            &phi_sigma,
            "phi",
            &mut report.skipped_coordinates,
        );
        report.rows.push(BoundWidthRow {
            word: w,
            pre_width,
            phi_width,
        });
    }
    if !report.rows.is_empty() {
        let tighter = report
            .rows
            .iter()
            .filter(|r| r.phi_width < r.pre_width)
            .count();
        report.phi_tighter_fraction = tighter as f64 / report.rows.len() as f64;
    }
    Ok(report)
}

/// Gaussian random vectors for synthetic tasks, scaled to unit-ish norm.
pub fn synthetic_vectors(vocab_size: usize, dim: usize, rng: &mut ChaCha8Rng) -> VectorStore {
    let mut store = VectorStore::new(dim, vocab_size);
    let scale = 1.0 / (dim as f64).sqrt();
    for w in 0..vocab_size {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng) * scale).collect();
        store.set(w, &v);
    }
    store
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniform draws.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Vector file: `word value_1 ... value_d`, space separated, consistent d.
pub fn load_vectors(path: &Path) -> Result<(Vocabulary, VectorStore)> {
    let text = fs::read_to_string(path)?;
    parse_vectors(&text, &path.display().to_string())
}

pub fn parse_vectors(text: &str, path: &str) -> Result<(Vocabulary, VectorStore)> {
    let mut vocab = Vocabulary::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| Error::data(path, lineno, "missing word"))?;
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::data(path, lineno, format!("bad float '{f}'")))
            })
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::data(path, lineno, "vector has no values"));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::data(
                    path,
                    lineno,
                    format!("inconsistent dimension: expected {d}, got {}", values.len()),
                ));
            }
            _ => {}
        }
        vocab
            .add(word)
            .map_err(|e| Error::data(path, lineno, e.to_string()))?;
        rows.push(values);
    }
    let dim = dim.ok_or_else(|| Error::data(path, 0, "empty vector file"))?;
    let mut store = VectorStore::new(dim, rows.len());
    for (w, row) in rows.iter().enumerate() {
        store.set(w, row);
    }
    Ok((vocab, store))
}

pub fn save_vectors(path: &Path, vocab: &Vocabulary, store: &VectorStore) -> Result<()> {
    let mut text = String::new();
    for w in 0..vocab.len() {
        let _ = write!(text, "{}", vocab.word(w));
        for v in store.vector(w) {
            let _ = write!(text, " {v}");
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
