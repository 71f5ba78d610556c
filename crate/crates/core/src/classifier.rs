//! L2-regularized logistic regression trained by seeded SGD.
//!
//! Each step on example `(x, y)` at global step `t` uses the rate
//! `eta_t = 1 / (lambda * t)` and applies
//!
//! ```text
//! w <- (1 - eta_t * lambda) * w - eta_t * g * x
//! b <- (1 - eta_t * lambda) * b - eta_t * g,     g = -y * sigmoid(-y * (w.x + b))
//! ```
//!
//! The bias behaves as an always-on feature and is regularized with the
//! weights. Left unregularized, its steps of up to `1 / lambda` are never
//! averaged away and it swamps the margin. The decay is applied lazily
//! through a scalar multiplier so a step costs `O(|support(x)|)`; the
//! multiplier is folded back in before a model is returned.

use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{FeatureRef, FeatureVector};

/// Linear forms are clamped to this magnitude before the sigmoid in [`score`].
pub const MARGIN_CLAMP: f64 = 30.0;

const SNAPSHOT_HEADER: &str = "hirecall-model v1";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    NoExamples,
    #[error("incremental training needs a prior model")]
    MissingPrior,
    #[error("lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("epochs must be at least 1")]
    InvalidEpochs,
    #[error("synthetic seed examples must be labeled positive")]
    SeedNotPositive,
    #[error("feature vector lacks its {0} part")]
    MissingPart(&'static str),
    #[error("model snapshot line {line}: {message}")]
    BadSnapshot { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Start every training round from a zero model.
    #[default]
    Scratch,
    /// Continue from the prior model's weights and step counter.
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-4,
            epochs: 5,
            seed: 0,
            mode: TrainMode::Scratch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(ClassifierError::InvalidLambda(self.lambda));
        }
        if self.epochs == 0 {
            return Err(ClassifierError::InvalidEpochs);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    HumanJudgment,
    SyntheticSeed,
    PseudoNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: Label,
    pub provenance: Provenance,
}

impl LabeledExample {
    pub fn new(features: FeatureVector, label: Label, provenance: Provenance) -> Result<Self, ClassifierError> {
        if provenance == Provenance::SyntheticSeed && label != Label::Positive {
            return Err(ClassifierError::SeedNotPositive);
        }
        Ok(LabeledExample {
            features,
            label,
            provenance,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Model {
    weights: Vec<f64>,
    bias: f64,
    steps_taken: u64,
}

impl Model {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_parts(weights: Vec<f64>, bias: f64, steps_taken: u64) -> Self {
        Model {
            weights,
            bias,
            steps_taken,
        }
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.weights.get(index).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// `w.x + b`, summed sparse block first, then dense block, then bias.
    pub fn margin(&self, x: FeatureRef<'_>) -> f64 {
        linear_form(&self.weights, 1.0, self.bias, x)
    }

    /// Writes the versioned text snapshot: header, step count, bias, then
    /// non-zero `index<TAB>weight` pairs sorted by index.
    pub fn write_snapshot(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "{SNAPSHOT_HEADER}")?;
        writeln!(out, "steps_taken {}", self.steps_taken)?;
        writeln!(out, "bias {}", self.bias)?;
        writeln!(out, "dim {}", self.weights.len())?;
        for (i, w) in self.weights.iter().enumerate() {
            if *w != 0.0 {
                writeln!(out, "{i}\t{w}")?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot(reader: impl BufRead) -> Result<Self, ClassifierError> {
        let bad = |line: usize, message: &str| ClassifierError::BadSnapshot {
            line,
            message: message.to_string(),
        };
        let mut lines = reader.lines();
        let mut next = |n: usize| -> Result<String, ClassifierError> {
            lines.next().ok_or_else(|| bad(n, "unexpected end of snapshot"))?.map_err(Into::into)
        };
        if next(1)? != SNAPSHOT_HEADER {
            return Err(bad(1, "unknown header"));
        }
        let field = |line: String, key: &str, n: usize| -> Result<String, ClassifierError> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(n, &format!("expected `{key} <value>`")))
        };
        let steps_taken: u64 = field(next(2)?, "steps_taken", 2)?.parse().map_err(|_| bad(2, "bad step count"))?;
        let bias: f64 = field(next(3)?, "bias", 3)?.parse().map_err(|_| bad(3, "bad bias"))?;
        let dim: usize = field(next(4)?, "dim", 4)?.parse().map_err(|_| bad(4, "bad dim"))?;
        let mut weights = vec![0.0; dim];
        let mut last: Option<usize> = None;
        let mut n = 4;
        for line in lines.by_ref() {
            n += 1;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (i, w) = line.split_once('\t').ok_or_else(|| bad(n, "expected index<TAB>weight"))?;
            let i: usize = i.parse().map_err(|_| bad(n, "bad index"))?;
            let w: f64 = w.parse().map_err(|_| bad(n, "bad weight"))?;
            if i >= dim || last.is_some_and(|l| l >= i) || !w.is_finite() {
                return Err(bad(n, "index out of order or out of range, or non-finite weight"));
            }
            weights[i] = w;
            last = Some(i);
        }
        Ok(Model {
            weights,
            bias,
            steps_taken,
        })
    }
}

fn linear_form(weights: &[f64], scale: f64, bias: f64, x: FeatureRef<'_>) -> f64 {
    let mut acc = 0.0;
    if let Some(sparse) = x.sparse {
        for (&i, &v) in sparse.indices().iter().zip(sparse.values()) {
            if let Some(w) = weights.get(i as usize) {
                acc += w * v;
            }
        }
    }
    if let Some(dense) = x.dense {
        let block = weights.get(x.dense_offset..).unwrap_or(&[]);
        for (w, &v) in block.iter().zip(dense) {
            acc += w * (x.dense_scale * v as f64);
        }
    }
    scale * acc + bias
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Probability of relevance, `sigmoid(clamp(w.x + b))`.
pub fn score(model: &Model, x: FeatureRef<'_>) -> f64 {
    sigmoid(model.margin(x).clamp(-MARGIN_CLAMP, MARGIN_CLAMP))
}

/// Sum of the sparse model's score on the sparse part and the dense model's
/// score on the dense part.
pub fn score_dual(model_sparse: &Model, model_dense: &Model, x: FeatureRef<'_>) -> Result<f64, ClassifierError> {
    let sparse = x.sparse_part().ok_or(ClassifierError::MissingPart("sparse"))?;
    let dense = x.dense_part().ok_or(ClassifierError::MissingPart("dense"))?;
    Ok(score(model_sparse, sparse) + score(model_dense, dense))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Non-zero partial derivatives by feature index, ascending.
    pub weights: Vec<(usize, f64)>,
    pub bias: f64,
}

/// Regularized logistic loss `ln(1 + exp(-y z)) + lambda/2 (|w|^2 + b^2)` at `model`
/// for one example, and its exact gradient.
pub fn loss_and_gradient(model: &Model, example: &LabeledExample, lambda: f64) -> (f64, Gradient) {
    let x = example.features.as_ref();
    let y = example.label.sign();
    let z = model.margin(x);
    let norm_sq: f64 = model.weights.iter().map(|w| w * w).sum();
    let loss = softplus(-y * z) + 0.5 * lambda * (norm_sq + model.bias * model.bias);
    let g = -y * sigmoid(-y * z);

    let mut grad: Vec<f64> = model.weights.iter().map(|w| lambda * w).collect();
    for (i, v) in x.entries() {
        if grad.len() <= i {
            grad.resize(i + 1, 0.0);
        }
        grad[i] += g * v;
    }
    let weights = grad
        .into_iter()
        .enumerate()
        .filter(|(_, d)| *d != 0.0)
        .collect();
    (
        loss,
        Gradient {
            weights,
            bias: g + lambda * model.bias,
        },
    )
}

/// Trains with a generator seeded from `config.seed`.
pub fn train(examples: &[LabeledExample], config: &TrainConfig, prior: Option<&Model>) -> Result<Model, ClassifierError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    train_with_rng(examples, config, prior, &mut rng, |e| e.features.as_ref())
}

/// Trains on the views selected by `view` (e.g. one half of an E4 vector),
/// drawing the per-epoch shuffles from `rng`.
pub fn train_with_rng<'a, R: Rng + ?Sized>(
    examples: &'a [LabeledExample],
    config: &TrainConfig,
    prior: Option<&Model>,
    rng: &mut R,
    view: impl Fn(&'a LabeledExample) -> FeatureRef<'a>,
) -> Result<Model, ClassifierError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(ClassifierError::NoExamples);
    }
    let views: Vec<(FeatureRef<'a>, f64)> = examples.iter().map(|e| (view(e), e.label.sign())).collect();
    let extent = views.iter().map(|(x, _)| x.extent()).max().unwrap_or(0);

    // `v` and `vb` hold the weights and bias divided by `scale`.
    let (mut v, mut vb, mut t) = match config.mode {
        TrainMode::Scratch => (vec![0.0; extent], 0.0, 0u64),
        TrainMode::Incremental => {
            let prior = prior.ok_or(ClassifierError::MissingPrior)?;
            let mut w = prior.weights.clone();
            if w.len() < extent {
                w.resize(extent, 0.0);
            }
            (w, prior.bias, prior.steps_taken)
        }
    };
    let mut scale = 1.0f64;
    let lambda = config.lambda;

    let mut order: Vec<usize> = (0..views.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for &k in &order {
            let (x, y) = views[k];
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let z = linear_form(&v, scale, scale * vb, x);
            let g = -y * sigmoid(-y * z);

            let decay = 1.0 - eta * lambda;
            if decay <= 0.0 {
                v.iter_mut().for_each(|w| *w = 0.0);
                vb = 0.0;
                scale = 1.0;
            } else {
                scale *= decay;
                if scale < 1e-9 {
                    v.iter_mut().for_each(|w| *w *= scale);
                    vb *= scale;
                    scale = 1.0;
                }
            }

            let step = -eta * g / scale;
            if let Some(sparse) = x.sparse {
                for (&i, &xv) in sparse.indices().iter().zip(sparse.values()) {
                    v[i as usize] += step * xv;
                }
            }
            if let Some(dense) = x.dense {
                for (w, &xv) in v[x.dense_offset..].iter_mut().zip(dense) {
                    *w += step * (x.dense_scale * xv as f64);
                }
            }
            vb += step;
        }
    }
    if scale != 1.0 {
        v.iter_mut().for_each(|w| *w *= scale);
        vb *= scale;
    }
    Ok(Model {
        weights: v,
        bias: vb,
        steps_taken: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::DenseVector;
    use crate::features::SparseVector;
    use proptest::prelude::*;
    use rand::Rng;

    fn example(pairs: &[(u32, f64)], label: Label) -> LabeledExample {
        LabeledExample::new(
            FeatureVector::sparse(SparseVector::from_pairs(pairs.iter().copied())),
            label,
            Provenance::HumanJudgment,
        )
        .unwrap()
    }

    /// Twenty points: the label is the sign of feature 0; other features are noise.
    fn separable_fixture() -> Vec<LabeledExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        (0..20)
            .map(|k| {
                let label = if k % 2 == 0 { Label::Positive } else { Label::Negative };
                let mut pairs = vec![(0, label.sign() * rng.random_range(0.5..1.0))];
                for j in 1..6 {
                    pairs.push((j, rng.random_range(-0.3..0.3)));
                }
                let mut v = SparseVector::from_pairs(pairs);
                v.normalize();
                LabeledExample::new(FeatureVector::sparse(v), label, Provenance::HumanJudgment).unwrap()
            })
            .collect()
    }

    fn accuracy(model: &Model, examples: &[LabeledExample]) -> f64 {
        let correct = examples
            .iter()
            .filter(|e| (model.margin(e.features.as_ref()) > 0.0) == (e.label == Label::Positive))
            .count();
        correct as f64 / examples.len() as f64
    }

    #[test]
    fn separable_fixture_is_learned() {
        let data = separable_fixture();
        let model = train(&data, &TrainConfig::default(), None).unwrap();
        assert_eq!(accuracy(&model, &data), 1.0);
        assert_eq!(model.steps_taken(), 100);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_fixture();
        let cfg = TrainConfig { seed: 9, ..TrainConfig::default() };
        let a = train(&data, &cfg, None).unwrap();
        let b = train(&data, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert!(a.weights().iter().zip(b.weights()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn scratch_ignores_prior() {
        let data = separable_fixture();
        let cfg = TrainConfig::default();
        let prior = Model::from_parts(vec![5.0; 8], 3.0, 77);
        assert_eq!(train(&data, &cfg, Some(&prior)).unwrap(), train(&data, &cfg, None).unwrap());
    }

    #[test]
    fn incremental_needs_prior_and_continues_steps() {
        let data = separable_fixture();
        let cfg = TrainConfig { mode: TrainMode::Incremental, ..TrainConfig::default() };
        assert!(matches!(train(&data, &cfg, None), Err(ClassifierError::MissingPrior)));
        let first = train(&data[..10], &TrainConfig::default(), None).unwrap();
        let second = train(&data[10..], &cfg, Some(&first)).unwrap();
        assert_eq!(second.steps_taken(), first.steps_taken() + 50);
    }

    #[test]
    fn incremental_and_scratch_both_fit_separable_data() {
        let data = separable_fixture();
        let scratch = train(&data, &TrainConfig::default(), None).unwrap();
        let cfg = TrainConfig { mode: TrainMode::Incremental, ..TrainConfig::default() };
        let mut model = Model::zero();
        for chunk in data.chunks(4) {
            model = train(chunk, &cfg, Some(&model)).unwrap();
        }
        assert!(accuracy(&scratch, &data) >= 0.9);
        assert!(accuracy(&model, &data) >= 0.9);
    }

    #[test]
    fn single_class_input_still_trains() {
        let data = vec![example(&[(0, 1.0)], Label::Positive)];
        let model = train(&data, &TrainConfig::default(), None).unwrap();
        assert!(model.weights().iter().all(|w| w.is_finite()));
        assert!(model.margin(data[0].features.as_ref()) > 0.0);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(matches!(train(&[], &TrainConfig::default(), None), Err(ClassifierError::NoExamples)));
        let bad = TrainConfig { lambda: 0.0, ..TrainConfig::default() };
        assert!(matches!(train(&separable_fixture(), &bad, None), Err(ClassifierError::InvalidLambda(_))));
    }

    #[test]
    fn seed_must_be_positive() {
        let fv = FeatureVector::sparse(SparseVector::new());
        assert!(LabeledExample::new(fv, Label::Negative, Provenance::SyntheticSeed).is_err());
    }

    #[test]
    fn score_examples() {
        let x = SparseVector::from_pairs([(0, 2.0), (4, -1.0)]);
        assert_eq!(score(&Model::zero(), FeatureRef::sparse_only(&x)), 0.5);
        let model = Model::from_parts(vec![0.0], 3f64.ln(), 0);
        assert!((score(&model, FeatureRef::sparse_only(&x)) - 0.75).abs() < 1e-15);
        let huge = Model::from_parts(vec![1e6], 0.0, 0);
        let s = score(&huge, FeatureRef::sparse_only(&x));
        assert!(s < 1.0 && s > 0.99);
    }

    proptest! {
        #[test]
        fn score_monotone_in_margin(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let x = SparseVector::new();
            let sa = score(&Model::from_parts(vec![], a, 0), FeatureRef::sparse_only(&x));
            let sb = score(&Model::from_parts(vec![], b, 0), FeatureRef::sparse_only(&x));
            if a <= b { prop_assert!(sa <= sb); } else { prop_assert!(sa >= sb); }
        }
    }

    fn dual_vector(sparse: &[(u32, f64)], dense: &[f32]) -> FeatureVector {
        FeatureVector {
            sparse: Some(SparseVector::from_pairs(sparse.iter().copied())),
            dense: DenseVector::new(dense.to_vec()),
            dense_offset: 0,
            dense_scale: 1.0,
        }
    }

    #[test]
    fn score_dual_examples() {
        let fv = dual_vector(&[(1, 1.0)], &[0.5, 0.5]);
        assert_eq!(score_dual(&Model::zero(), &Model::zero(), fv.as_ref()).unwrap(), 1.0);
        let saturated = Model::from_parts(vec![0.0, 1e9], 0.0, 0);
        let s = score_dual(&saturated, &Model::zero(), fv.as_ref()).unwrap();
        assert!((s - 1.5).abs() < 1e-12);
        let sparse_only = FeatureVector::sparse(SparseVector::from_pairs([(1, 1.0)]));
        assert!(score_dual(&Model::zero(), &Model::zero(), sparse_only.as_ref()).is_err());
    }

    #[test]
    fn score_dual_ranks_like_independent_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ms = Model::from_parts((0..6).map(|_| rng.random_range(-2.0..2.0)).collect(), 0.1, 0);
        let md = Model::from_parts((0..3).map(|_| rng.random_range(-2.0..2.0)).collect(), -0.2, 0);
        let vectors: Vec<FeatureVector> = (0..100)
            .map(|_| {
                let sparse: Vec<(u32, f64)> = (0..6).map(|i| (i, rng.random_range(-1.0..1.0))).collect();
                let dense: Vec<f32> = (0..3).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                dual_vector(&sparse, &dense)
            })
            .collect();
        let rank = |scores: Vec<f64>| {
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            idx
        };
        let via_dual = rank(vectors.iter().map(|v| score_dual(&ms, &md, v.as_ref()).unwrap()).collect());
        let brute = rank(
            vectors
                .iter()
                .map(|v| {
                    let s: f64 = v.sparse.as_ref().unwrap().iter().map(|(i, x)| ms.weight(i as usize) * x).sum::<f64>() + ms.bias();
                    let d: f64 = v.dense.as_ref().unwrap().values().iter().enumerate().map(|(i, &x)| md.weight(i) * x as f64).sum::<f64>() + md.bias();
                    1.0 / (1.0 + (-s).exp()) + 1.0 / (1.0 + (-d).exp())
                })
                .collect(),
        );
        assert_eq!(via_dual, brute);
    }

    #[test]
    fn gradient_at_zero_for_positive_example() {
        let ex = example(&[(0, 0.6), (3, 0.8)], Label::Positive);
        let (loss, grad) = loss_and_gradient(&Model::zero(), &ex, 1e-4);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(grad.weights, vec![(0, -0.3), (3, -0.4)]);
        assert_eq!(grad.bias, -0.5);
        let neg = example(&[(1, 1.0)], Label::Negative);
        assert!((loss_and_gradient(&Model::zero(), &neg, 1.0).0 - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn regularization_path_shrinks_weights() {
        let data = separable_fixture();
        let norms: Vec<f64> = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&lambda| train(&data, &TrainConfig { lambda, ..TrainConfig::default() }, None).unwrap().weight_norm())
            .collect();
        for pair in norms.windows(2) {
            assert!(pair[1] < pair[0], "{norms:?}");
        }
        assert!(*norms.last().unwrap() < 0.1);
    }

    #[test]
    fn snapshot_roundtrip_is_exact() {
        let model = train(&separable_fixture(), &TrainConfig::default(), None).unwrap();
        let mut buf = Vec::new();
        model.write_snapshot(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("hirecall-model v1\n"));
        let back = Model::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert!(Model::read_snapshot("garbage\n".as_bytes()).is_err());
    }

    #[test]
    fn dense_block_trains_at_offset() {
        let fv = FeatureVector {
            sparse: Some(SparseVector::from_pairs([(0, 1.0)])),
            dense: DenseVector::new(vec![1.0, -1.0]),
            dense_offset: 3,
            dense_scale: 1.0,
        };
        let ex = LabeledExample::new(fv, Label::Positive, Provenance::HumanJudgment).unwrap();
        let model = train(&[ex], &TrainConfig::default(), None).unwrap();
        assert_eq!(model.weights().len(), 5);
        assert_eq!(model.weight(1), 0.0);
        assert!(model.weight(3) > 0.0 && model.weight(4) < 0.0);
    }
}
