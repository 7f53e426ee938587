//! Desk-scale dual-encoder training: linear projections followed by l2
//! normalization, optimized with AdamW under the contrastive or the
//! contrastive + certainty-alignment objective.
//!
//! During training the text paired with each image is its class prototype, so
//! the distractors in a batch are the prototypes of the other classes present.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::alignment::{class_probabilities, ClassPrototypes, SimilarityBatch};
use crate::cohort::SampleRecord;
use crate::error::{Error, Result};
use crate::fairness::{LabeledScores, ScoredRow};
use crate::mmd::KernelConfig;
use crate::objectives::{total_loss, BatchAnnotations, LossConfig};
use crate::subgroup::SubgroupKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Erm,
    Cmac,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Mode::Erm),
            "cmac" => Ok(Mode::Cmac),
            other => Err(Error::InvalidConfig(format!(
                "mode must be `erm` or `cmac`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda_cmac: f64,
    pub seed: u64,
    pub mode: Mode,
    pub d_emb: usize,
    pub temperature: f64,
    pub kernel: KernelConfig,
    pub min_subgroup_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-5,
            weight_decay: 5e-5,
            lambda_cmac: 0.5,
            seed: 0,
            mode: Mode::Cmac,
            d_emb: 8,
            temperature: 0.07,
            kernel: KernelConfig::default(),
            min_subgroup_batch: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidConfig(format!("{field}: {msg}")));
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1".into());
        }
        if self.d_emb == 0 {
            return bad("d_emb", "must be >= 1".into());
        }
        if self.min_subgroup_batch == 0 {
            return bad("min_subgroup_batch", "must be >= 1".into());
        }
        if self.batch_size < 2 * self.min_subgroup_batch {
            return bad(
                "batch_size",
                format!("must be >= {} (twice min_subgroup_batch)", 2 * self.min_subgroup_batch),
            );
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", format!("must be > 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", format!("must be >= 0, got {}", self.weight_decay));
        }
        self.loss_config().validate()
    }

    /// The configuration actually trained: ERM is the zero-weight fairness
    /// term, so `mode = cmac, lambda_cmac = 0` and `mode = erm` collapse to the
    /// same value.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        if c.mode == Mode::Erm || c.lambda_cmac == 0.0 {
            c.mode = Mode::Erm;
            c.lambda_cmac = 0.0;
        }
        c
    }

    pub fn loss_config(&self) -> LossConfig {
        let eff_lambda = if self.mode == Mode::Erm { 0.0 } else { self.lambda_cmac };
        LossConfig {
            lambda_cmac: eff_lambda,
            temperature: self.temperature,
            kernel: self.kernel,
            min_subgroup_batch: self.min_subgroup_batch,
        }
    }
}

/// Image and text projections, each `d_in x d_emb`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoders {
    pub image_weights: Array2<f64>,
    pub text_weights: Array2<f64>,
    pub temperature: f64,
}

/// Entries drawn from N(0, 1/d_in).
pub fn init_encoders(d_in: usize, d_emb: usize, seed: u64) -> Result<Encoders> {
    if d_in == 0 || d_emb == 0 {
        return Err(Error::InvalidConfig("d_in and d_emb must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, 1.0 / (d_in as f64).sqrt()).expect("positive scale");
    let mut draw = || Array2::from_shape_fn((d_in, d_emb), |_| rng.sample(dist));
    let image_weights = draw();
    let text_weights = draw();
    Ok(Encoders {
        image_weights,
        text_weights,
        temperature: 0.07,
    })
}

/// Project rows and l2-normalize. Returns the embeddings and the pre-norm lengths.
fn project(weights: &Array2<f64>, x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut u = x.dot(weights);
    let norms = u.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    for (mut row, n) in u.rows_mut().into_iter().zip(norms.iter()) {
        row /= *n;
    }
    (u, norms)
}

/// Back-propagate through `z = u / |u|`.
fn unnormalize_grad(gz: &Array2<f64>, z: &Array2<f64>, norms: &Array1<f64>) -> Array2<f64> {
    let mut gu = gz.clone();
    for ((mut g, zr), n) in gu.rows_mut().into_iter().zip(z.rows()).zip(norms.iter()) {
        let proj = g.dot(&zr);
        g.scaled_add(-proj, &zr);
        g /= *n;
    }
    gu
}

impl Encoders {
    pub fn d_in(&self) -> usize {
        self.image_weights.nrows()
    }

    pub fn d_emb(&self) -> usize {
        self.image_weights.ncols()
    }

    pub fn encode_images(&self, x: ArrayView2<f64>) -> Array2<f64> {
        project(&self.image_weights, x).0
    }

    pub fn encode_texts(&self, t: ArrayView2<f64>) -> Array2<f64> {
        project(&self.text_weights, t).0
    }

    pub fn prototypes(&self, class_texts: &ClassPrototypes) -> Result<ClassPrototypes> {
        let t = rows_to_array(class_texts.texts(), self.d_in())?;
        ClassPrototypes::new(to_rows(&self.encode_texts(t.view())))
    }
}

fn rows_to_array(rows: &[Vec<f64>], dim: usize) -> Result<Array2<f64>> {
    let mut a = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        a.row_mut(i).assign(&Array1::from(r.clone()));
    }
    Ok(a)
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Canonical class text inputs for the toy model: the first standard basis
/// vectors of the input space, one per class.
pub fn default_class_texts(num_classes: usize, d_in: usize) -> Result<ClassPrototypes> {
    if num_classes > d_in {
        return Err(Error::InvalidConfig(format!(
            "{num_classes} classes need d_in >= {num_classes}, got {d_in}"
        )));
    }
    ClassPrototypes::new(
        (0..num_classes)
            .map(|c| {
                let mut v = vec![0.0; d_in];
                v[c] = 1.0;
                v
            })
            .collect(),
    )
}

/// Mini-batch index partition for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    /// Set when the data holds a single subgroup, so the fairness term is inert.
    pub infeasible_stratification: bool,
}

/// Stratified round-robin batching.
///
/// Each subgroup is shuffled and cut into pairs (a trailing singleton joins the
/// last pair). Pairs from all subgroups are interleaved in proportion to
/// subgroup size and the sequence is cut into near-equal batches, so every batch
/// carries a proportional share of each subgroup in units of at least two.
pub fn make_batches(subgroups: &[SubgroupKey], batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "batch_size must be >= 2, got {batch_size}"
        )));
    }
    let n = subgroups.len();
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    let mut by_group: BTreeMap<&SubgroupKey, Vec<usize>> = BTreeMap::new();
    for (i, g) in subgroups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // (position key, group rank, chunk)
    let mut chunks: Vec<(f64, usize, Vec<usize>)> = Vec::new();
    let mut group_rank: Vec<usize> = (0..by_group.len()).collect();
    group_rank.shuffle(&mut rng);
    for ((_, mut members), rank) in by_group.into_iter().zip(group_rank) {
        members.shuffle(&mut rng);
        let mut parts: Vec<Vec<usize>> = members.chunks(2).map(<[usize]>::to_vec).collect();
        if parts.len() > 1 && parts.last().is_some_and(|p| p.len() == 1) {
            let single = parts.pop().expect("nonempty");
            parts.last_mut().expect("nonempty").extend(single);
        }
        let count = parts.len() as f64;
        for (k, p) in parts.into_iter().enumerate() {
            chunks.push(((k as f64 + 0.5) / count, rank, p));
        }
    }
    chunks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let groups_present = chunks.iter().map(|c| c.1).max().map_or(0, |m| m + 1);

    let num_batches = n.div_ceil(batch_size);
    let mut batches: Vec<Vec<usize>> = Vec::with_capacity(num_batches);
    let mut current = Vec::new();
    let mut filled = 0usize;
    for (_, _, chunk) in chunks {
        current.extend(chunk);
        let target = (n * (batches.len() + 1)).div_ceil(num_batches);
        if filled + current.len() >= target && batches.len() + 1 < num_batches {
            filled += current.len();
            batches.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(BatchPlan {
        batches,
        infeasible_stratification: groups_present < 2,
    })
}

/// Per-epoch means of the batch losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub clip: f64,
    pub cmac: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub encoders: Encoders,
    /// Class text inputs, before the text encoder.
    pub class_texts: ClassPrototypes,
    /// Encoded class prototypes used for inference.
    pub prototypes: ClassPrototypes,
    /// Effective configuration (see [`TrainConfig::effective`]).
    pub config: TrainConfig,
    pub history: Vec<EpochLosses>,
    pub infeasible_stratification: bool,
}

struct AdamW {
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shape: (usize, usize)) -> Self {
        Self {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t: 0,
        }
    }

    fn step(&mut self, w: &mut Array2<f64>, g: &Array2<f64>, lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        ndarray::Zip::from(w)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(g)
            .for_each(|w, m, v, &g| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                *w -= lr * (update + wd * *w);
            });
    }
}

fn dataset_arrays(records: &[SampleRecord]) -> Result<(Array2<f64>, Vec<usize>, Vec<SubgroupKey>)> {
    let first = records.first().ok_or(Error::Empty("dataset"))?;
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.features.clone()).collect();
    let x = rows_to_array(&rows, first.features.len())?;
    Ok((
        x,
        records.iter().map(|r| r.label).collect(),
        records.iter().map(|r| r.subgroup.clone()).collect(),
    ))
}

/// Loss and encoder gradients for one batch.
struct BatchStep {
    clip: f64,
    cmac: f64,
    total: f64,
    grad_image: Array2<f64>,
    grad_text: Array2<f64>,
}

fn batch_step(
    enc: &Encoders,
    x: ArrayView2<f64>,
    labels: &[usize],
    groups: Vec<SubgroupKey>,
    class_texts: &Array2<f64>,
    loss_cfg: &LossConfig,
) -> Result<BatchStep> {
    let tau = loss_cfg.temperature;
    let (z, z_norms) = project(&enc.image_weights, x);
    let (p, p_norms) = project(&enc.text_weights, class_texts.view());
    let paired = p.select(Axis(0), labels);
    let s = z.dot(&paired.t()) / tau;
    if let Some(bad) = s.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            detail: format!("similarity matrix holds {bad}"),
        });
    }
    let batch = SimilarityBatch::from_matrix(s, tau)?;
    let ann = BatchAnnotations::new(groups).with_pair_class(labels.to_vec());
    let out = total_loss(&batch, &ann, loss_cfg)?;

    let g = &out.grad;
    let gz = g.dot(&paired) / tau;
    let g_paired = g.t().dot(&z) / tau;
    let mut gp = Array2::zeros(p.raw_dim());
    for (j, &c) in labels.iter().enumerate() {
        let mut row = gp.row_mut(c);
        row += &g_paired.row(j);
    }
    let gu = unnormalize_grad(&gz, &z, &z_norms);
    let gv = unnormalize_grad(&gp, &p, &p_norms);
    Ok(BatchStep {
        clip: out.clip,
        cmac: out.cmac,
        total: out.loss,
        grad_image: x.t().dot(&gu),
        grad_text: class_texts.t().dot(&gv),
    })
}

/// Train both encoders. Deterministic in (records, class_texts, cfg).
pub fn train(
    records: &[SampleRecord],
    class_texts: &ClassPrototypes,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let cfg = cfg.effective();
    let (x, labels, groups) = dataset_arrays(records)?;
    let classes = class_texts.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidClassIndex {
            index: bad,
            classes,
        });
    }
    let d_in = x.ncols();
    if class_texts.dim() != d_in {
        return Err(Error::DimensionMismatch {
            expected: d_in,
            got: class_texts.dim(),
        });
    }
    let t = rows_to_array(class_texts.texts(), d_in)?;
    let loss_cfg = cfg.loss_config();

    let mut enc = init_encoders(d_in, cfg.d_emb, cfg.seed)?;
    enc.temperature = cfg.temperature;
    let mut opt_image = AdamW::new(enc.image_weights.dim());
    let mut opt_text = AdamW::new(enc.text_weights.dim());
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    epoch_rng.set_stream(1);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut infeasible = false;
    for epoch in 0..cfg.epochs {
        let plan = make_batches(&groups, cfg.batch_size, epoch_rng.random())?;
        infeasible |= plan.infeasible_stratification;
        let (mut clip, mut cmac, mut total, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (b, idx) in plan.batches.iter().enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let xb = x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let gb: Vec<SubgroupKey> = idx.iter().map(|&i| groups[i].clone()).collect();
            let step = batch_step(&enc, xb.view(), &yb, gb, &t, &loss_cfg).map_err(|e| match e {
                Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { epoch, batch: b, detail },
                other => other,
            })?;
            let grads_finite = step.grad_image.iter().chain(step.grad_text.iter()).all(|v| v.is_finite());
            if !(step.total.is_finite() && grads_finite) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!(
                        "clip={} cmac={} total={} finite_grad={grads_finite}",
                        step.clip, step.cmac, step.total
                    ),
                });
            }
            opt_image.step(&mut enc.image_weights, &step.grad_image, cfg.learning_rate, cfg.weight_decay);
            opt_text.step(&mut enc.text_weights, &step.grad_text, cfg.learning_rate, cfg.weight_decay);
            clip += step.clip;
            cmac += step.cmac;
            total += step.total;
            steps += 1;
        }
        let k = steps.max(1) as f64;
        history.push(EpochLosses {
            clip: clip / k,
            cmac: cmac / k,
            total: total / k,
        });
    }
    let prototypes = enc.prototypes(class_texts)?;
    Ok(TrainedModel {
        encoders: enc,
        class_texts: class_texts.clone(),
        prototypes,
        config: cfg,
        history,
        infeasible_stratification: infeasible,
    })
}

/// Score every record from its features alone. Subgroups are copied onto the
/// output rows for grouping and never enter the forward pass.
///
/// The score is the probability of class 1; the prediction applies the 0.5
/// threshold rule.
pub fn evaluate_model(model: &TrainedModel, records: &[SampleRecord]) -> Result<LabeledScores> {
    let (x, _, _) = dataset_arrays(records)?;
    if x.ncols() != model.encoders.d_in() {
        return Err(Error::DimensionMismatch {
            expected: model.encoders.d_in(),
            got: x.ncols(),
        });
    }
    let z = to_rows(&model.encoders.encode_images(x.view()));
    let probs = class_probabilities(&z, &model.prototypes, model.encoders.temperature)?;
    let rows = records
        .iter()
        .zip(probs)
        .map(|(r, p)| {
            let score = p[1];
            ScoredRow {
                id: r.id,
                subgroup: r.subgroup.clone(),
                label: u8::from(r.label == 1),
                score,
                predicted: Some(u8::from(score >= 0.5)),
            }
        })
        .collect();
    LabeledScores::new(rows)
}
