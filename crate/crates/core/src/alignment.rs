//! Cosine geometry of the shared image/text embedding space.
//!
//! Two margin notions live here and are deliberately kept apart:
//!
//! * batch-relative alignment scores, `a_i = S_ii - max_{j != i} S_ij`, where the
//!   distractors are the other texts of the mini-batch (used by the training loss);
//! * class-relative certainty, the softmax probability of the correct class over
//!   the class prototypes (used by every evaluation metric).

use ndarray::Array2;

use crate::error::{Error, Result};

/// Inputs whose norm deviates from one by more than this are rejected.
pub const NORM_TOLERANCE: f64 = 1e-4;

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_finite() && temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(temperature))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Re-normalize a vector that is already unit norm within [`NORM_TOLERANCE`].
pub fn renormalize(v: &[f64], index: usize) -> Result<Vec<f64>> {
    let norm = dot(v, v).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::NonUnitNorm { index, norm });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn renormalize_all(vs: &[Vec<f64>], dim: usize) -> Result<Vec<Vec<f64>>> {
    vs.iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            renormalize(v, i)
        })
        .collect()
}

/// A matched image/text embedding pair, both unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    image: Vec<f64>,
    text: Vec<f64>,
}

impl EmbeddingPair {
    pub fn new(image: &[f64], text: &[f64]) -> Result<Self> {
        if image.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if image.len() != text.len() {
            return Err(Error::DimensionMismatch {
                expected: image.len(),
                got: text.len(),
            });
        }
        Ok(Self {
            image: renormalize(image, 0)?,
            text: renormalize(text, 0)?,
        })
    }

    pub fn image(&self) -> &[f64] {
        &self.image
    }

    pub fn text(&self) -> &[f64] {
        &self.text
    }

    pub fn dim(&self) -> usize {
        self.image.len()
    }
}

/// Temperature-scaled cosine similarities `S_ij = <image_i, text_j> / tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBatch {
    matrix: Array2<f64>,
    temperature: f64,
}

impl SimilarityBatch {
    /// Wrap an already-scaled square similarity matrix.
    pub fn from_matrix(matrix: Array2<f64>, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        let (rows, cols) = matrix.dim();
        if rows == 0 {
            return Err(Error::Empty("similarity matrix"));
        }
        if rows != cols {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: cols,
            });
        }
        Ok(Self {
            matrix,
            temperature,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], temperature: f64) -> Result<Self> {
        let n = rows.len();
        let mut m = Array2::zeros((n, n));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                m[[i, j]] = *v;
            }
        }
        Self::from_matrix(m, temperature)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Build the similarity batch for `n` matched image/text pairs.
pub fn similarity_batch(
    images: &[Vec<f64>],
    texts: &[Vec<f64>],
    temperature: f64,
) -> Result<SimilarityBatch> {
    check_temperature(temperature)?;
    if images.is_empty() {
        return Err(Error::Empty("image batch"));
    }
    if images.len() != texts.len() {
        return Err(Error::LengthMismatch {
            left: images.len(),
            right: texts.len(),
        });
    }
    let dim = images[0].len();
    let images = renormalize_all(images, dim)?;
    let texts = renormalize_all(texts, dim)?;
    let n = images.len();
    let matrix = Array2::from_shape_fn((n, n), |(i, j)| dot(&images[i], &texts[j]) / temperature);
    Ok(SimilarityBatch {
        matrix,
        temperature,
    })
}

/// Margin of one row over its strongest distractor column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    pub score: f64,
    /// Column of the strongest distractor; ties go to the lowest index.
    pub rival: usize,
}

/// Per-row margins `S_ii - max_j S_ij` over the admissible distractor columns.
///
/// Without `pair_class` every `j != i` is a distractor. With it, columns that
/// carry the same paired class as row `i` are duplicates of the positive and are
/// skipped; a row left with no distractor yields `None`.
pub fn alignment_margins(
    batch: &SimilarityBatch,
    pair_class: Option<&[usize]>,
) -> Result<Vec<Option<Margin>>> {
    let n = batch.len();
    if let Some(classes) = pair_class {
        if classes.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: classes.len(),
            });
        }
    }
    let s = batch.matrix();
    Ok((0..n)
        .map(|i| {
            let mut best: Option<usize> = None;
            for j in 0..n {
                if j == i {
                    continue;
                }
                if let Some(classes) = pair_class {
                    if classes[j] == classes[i] {
                        continue;
                    }
                }
                match best {
                    Some(b) if s[[i, j]] <= s[[i, b]] => {}
                    _ => best = Some(j),
                }
            }
            best.map(|rival| Margin {
                score: s[[i, i]] - s[[i, rival]],
                rival,
            })
        })
        .collect())
}

/// Batch-relative alignment scores `a_i = S_ii - max_{j != i} S_ij`.
pub fn alignment_scores(batch: &SimilarityBatch) -> Result<Vec<f64>> {
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall(batch.len()));
    }
    Ok(alignment_margins(batch, None)?
        .into_iter()
        .map(|m| m.expect("n >= 2 leaves a distractor").score)
        .collect())
}

/// Unit text vectors, one per diagnostic class, in canonical label order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    texts: Vec<Vec<f64>>,
}

impl ClassPrototypes {
    pub fn new(texts: Vec<Vec<f64>>) -> Result<Self> {
        if texts.len() < 2 {
            return Err(Error::TooFewSamples {
                need: 2,
                got: texts.len(),
            });
        }
        let dim = texts[0].len();
        if dim == 0 {
            return Err(Error::Empty("prototype"));
        }
        Ok(Self {
            texts: renormalize_all(&texts, dim)?,
        })
    }

    pub fn texts(&self) -> &[Vec<f64>] {
        &self.texts
    }

    pub fn num_classes(&self) -> usize {
        self.texts.len()
    }

    pub fn dim(&self) -> usize {
        self.texts[0].len()
    }
}

fn image_checked(image: &[f64], index: usize, dim: usize) -> Result<Vec<f64>> {
    if image.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: image.len(),
        });
    }
    renormalize(image, index)
}

fn softmax_of_similarities(image: &[f64], prototypes: &ClassPrototypes, temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = prototypes
        .texts()
        .iter()
        .map(|t| dot(image, t) / temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax over the class prototypes for each image.
pub fn class_probabilities(
    images: &[Vec<f64>],
    prototypes: &ClassPrototypes,
    temperature: f64,
) -> Result<Vec<Vec<f64>>> {
    check_temperature(temperature)?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let img = image_checked(img, i, prototypes.dim())?;
            Ok(softmax_of_similarities(&img, prototypes, temperature))
        })
        .collect()
}

/// Diagnostic certainty: probability assigned to each sample's correct class.
pub fn certainty_scores(
    images: &[Vec<f64>],
    prototypes: &ClassPrototypes,
    correct_class: &[usize],
    temperature: f64,
) -> Result<Vec<f64>> {
    if images.len() != correct_class.len() {
        return Err(Error::LengthMismatch {
            left: images.len(),
            right: correct_class.len(),
        });
    }
    let classes = prototypes.num_classes();
    if let Some(&bad) = correct_class.iter().find(|&&c| c >= classes) {
        return Err(Error::InvalidClassIndex {
            index: bad,
            classes,
        });
    }
    let probs = class_probabilities(images, prototypes, temperature)?;
    Ok(probs
        .iter()
        .zip(correct_class)
        .map(|(p, &c)| p[c])
        .collect())
}

/// Index of the largest value; ties resolve to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// Most similar class per image, lowest index on ties.
pub fn predict_labels(
    images: &[Vec<f64>],
    prototypes: &ClassPrototypes,
    temperature: f64,
) -> Result<Vec<usize>> {
    check_temperature(temperature)?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let img = image_checked(img, i, prototypes.dim())?;
            let sims: Vec<f64> = prototypes.texts().iter().map(|t| dot(&img, t)).collect();
            Ok(argmax(&sims))
        })
        .collect()
}
