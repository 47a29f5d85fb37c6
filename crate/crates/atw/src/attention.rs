//! Attention scoring, softmax weighting, weighted aggregation, the
//! alternative consensus functions, and analytic backward passes.
//!
//! A stream model scores each snippet feature row with a linear map plus
//! activation, normalizes the scores to a weight simplex with softmax, and
//! aggregates either the feature rows (feature placement) or the per-snippet
//! class logits (logit placement) into one per-video prediction.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::math::{axpy, cross_entropy, dot, softmax, Activation, Matrix};

/// Where the attention weighting is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Weight the feature rows, then classify the aggregate (default).
    Feature,
    /// Classify each row, then weight the per-snippet logits.
    Logit,
}

/// How per-snippet outputs are fused into a per-video prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusKind {
    /// Elementwise max over per-snippet logits.
    Max,
    /// Mean of per-snippet class probabilities.
    Average,
    /// Learned attention weighting.
    Attention,
}

impl std::str::FromStr for ConsensusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(ConsensusKind::Max),
            "average" => Ok(ConsensusKind::Average),
            "attention" => Ok(ConsensusKind::Attention),
            other => Err(Error::invalid(format!("unknown consensus {other:?}"))),
        }
    }
}

/// Attention layer parameters: a weight vector over feature dimensions, a
/// scalar bias, and the activation applied to the raw score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub weight: Vec<f64>,
    pub bias: f64,
    pub activation: Activation,
}

impl AttentionParams {
    pub fn dim(&self) -> usize {
        self.weight.len()
    }
}

/// Initialization strategies for the attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Every weight 1, bias 0.
    Ones,
    /// Every weight 1/n for segment count n, bias 0; with uniform features
    /// this starts out equivalent to average consensus.
    UniformInvN { n: usize },
    /// I.i.d. gaussian with standard deviation 0.01, bias 0.
    Gaussian,
}

/// Build attention parameters for a `dim`-dimensional stream.
pub fn init_params(
    strategy: InitStrategy,
    dim: usize,
    activation: Activation,
    seed: u64,
) -> Result<AttentionParams> {
    if dim == 0 {
        return Err(Error::invalid("attention dim must be positive"));
    }
    let weight = match strategy {
        InitStrategy::Ones => vec![1.0; dim],
        InitStrategy::UniformInvN { n } => {
            if n == 0 {
                return Err(Error::invalid("segment count must be positive"));
            }
            vec![1.0 / n as f64; dim]
        }
        InitStrategy::Gaussian => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 0.01).expect("valid std");
            (0..dim).map(|_| normal.sample(&mut rng)).collect()
        }
    };
    Ok(AttentionParams {
        weight,
        bias: 0.0,
        activation,
    })
}

/// Result of one attention forward pass over a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Raw activated scores, one per snippet.
    pub scores: Vec<f64>,
    /// Softmax-normalized snippet weights; strictly positive, sum to 1.
    pub weights: Vec<f64>,
    /// Weighted aggregate: feature-length under feature placement,
    /// class-length under logit placement.
    pub aggregate: Vec<f64>,
}

/// Linear classifier head mapping a feature vector to class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Classifier {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Classifier {
            weight: Matrix::zeros(num_classes, dim),
            bias: vec![0.0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.weight.matvec(feature)?;
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        Ok(out)
    }
}

/// One modality stream: attention parameters, classifier head, and the
/// aggregation placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamModel {
    pub attention: AttentionParams,
    pub classifier: Classifier,
    pub placement: Placement,
}

const MODEL_VERSION: u32 = 1;

/// On-disk form of [`StreamModel`]; JSON with a version gate so future layout
/// changes fail loudly.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    feature_dim: usize,
    num_classes: usize,
    placement: Placement,
    activation: Activation,
    attention_weight: Vec<f64>,
    attention_bias: f64,
    classifier_weight: Matrix,
    classifier_bias: Vec<f64>,
}

impl StreamModel {
    pub fn new(
        attention: AttentionParams,
        classifier: Classifier,
        placement: Placement,
    ) -> Result<Self> {
        let model = StreamModel {
            attention,
            classifier,
            placement,
        };
        model.check_dims()?;
        Ok(model)
    }

    fn check_dims(&self) -> Result<()> {
        if self.classifier.weight.cols() != self.attention.dim() {
            return Err(Error::DimMismatch {
                what: "classifier columns vs attention dim",
                expected: self.attention.dim(),
                got: self.classifier.weight.cols(),
            });
        }
        if self.classifier.weight.rows() != self.classifier.bias.len() {
            return Err(Error::DimMismatch {
                what: "classifier rows vs bias",
                expected: self.classifier.bias.len(),
                got: self.classifier.weight.rows(),
            });
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.attention.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            version: MODEL_VERSION,
            feature_dim: self.feature_dim(),
            num_classes: self.num_classes(),
            placement: self.placement,
            activation: self.attention.activation,
            attention_weight: self.attention.weight.clone(),
            attention_bias: self.attention.bias,
            classifier_weight: self.classifier.weight.clone(),
            classifier_bias: self.classifier.bias.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        if file.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported model version {}",
                path.display(),
                file.version
            )));
        }
        if file.attention_weight.len() != file.feature_dim
            || file.classifier_bias.len() != file.num_classes
        {
            return Err(Error::Config(format!(
                "{}: model dims are inconsistent",
                path.display()
            )));
        }
        StreamModel::new(
            AttentionParams {
                weight: file.attention_weight,
                bias: file.attention_bias,
                activation: file.activation,
            },
            Classifier {
                weight: file.classifier_weight,
                bias: file.classifier_bias,
            },
            file.placement,
        )
    }
}

/// Raw attention scores: `act(weight · row + bias)` per feature row.
pub fn attention_scores(params: &AttentionParams, features: &FeatureSet) -> Result<Vec<f64>> {
    if features.dim() != params.dim() {
        return Err(Error::DimMismatch {
            what: "attention weight vs feature dim",
            expected: params.dim(),
            got: features.dim(),
        });
    }
    Ok(features
        .matrix
        .iter_rows()
        .map(|row| {
            params
                .activation
                .apply_scalar(dot(&params.weight, row) + params.bias)
        })
        .collect())
}

/// Softmax normalization of snippet scores into the weight simplex.
pub fn attention_weights(scores: &[f64]) -> Result<Vec<f64>> {
    softmax(scores)
}

/// Weighted sum of feature rows: `Σ weights[i] · row_i`.
pub fn aggregate_attention(weights: &[f64], features: &FeatureSet) -> Result<Vec<f64>> {
    if weights.len() != features.rows() {
        return Err(Error::DimMismatch {
            what: "weights vs feature rows",
            expected: features.rows(),
            got: weights.len(),
        });
    }
    let mut out = vec![0.0; features.dim()];
    for (w, row) in weights.iter().zip(features.matrix.iter_rows()) {
        axpy(&mut out, row, *w);
    }
    Ok(out)
}

/// Full attention forward pass under the model's placement.
pub fn attention_forward(model: &StreamModel, features: &FeatureSet) -> Result<AttentionOutput> {
    let scores = attention_scores(&model.attention, features)?;
    let weights = attention_weights(&scores)?;
    let aggregate = match model.placement {
        Placement::Feature => aggregate_attention(weights.as_slice(), features)?,
        Placement::Logit => {
            let mut out = vec![0.0; model.num_classes()];
            for (w, row) in weights.iter().zip(features.matrix.iter_rows()) {
                let logits = model.classifier.logits(row)?;
                axpy(&mut out, &logits, *w);
            }
            out
        }
    };
    Ok(AttentionOutput {
        scores,
        weights,
        aggregate,
    })
}

/// Pre-softmax class logits of the attention pipeline.
pub fn attention_logits(model: &StreamModel, features: &FeatureSet) -> Result<Vec<f64>> {
    let output = attention_forward(model, features)?;
    match model.placement {
        Placement::Feature => model.classifier.logits(&output.aggregate),
        Placement::Logit => Ok(output.aggregate),
    }
}

/// Per-video class scores under the chosen consensus function.
///
/// `Max` returns raw elementwise-max logits; `Average` returns mean
/// per-snippet probabilities; `Attention` returns class probabilities of the
/// attention pipeline. Use [`consensus_probs`] when a probability vector is
/// required regardless of kind.
pub fn consensus(
    kind: ConsensusKind,
    model: &StreamModel,
    features: &FeatureSet,
) -> Result<Vec<f64>> {
    if features.rows() == 0 {
        return Err(Error::invalid("consensus over zero snippets"));
    }
    match kind {
        ConsensusKind::Max => {
            let mut out = vec![f64::NEG_INFINITY; model.num_classes()];
            for row in features.matrix.iter_rows() {
                let logits = model.classifier.logits(row)?;
                for (o, l) in out.iter_mut().zip(&logits) {
                    *o = o.max(*l);
                }
            }
            Ok(out)
        }
        ConsensusKind::Average => {
            let mut out = vec![0.0; model.num_classes()];
            for row in features.matrix.iter_rows() {
                let probs = softmax(&model.classifier.logits(row)?)?;
                axpy(&mut out, &probs, 1.0);
            }
            let n = features.rows() as f64;
            for o in &mut out {
                *o /= n;
            }
            Ok(out)
        }
        ConsensusKind::Attention => softmax(&attention_logits(model, features)?),
    }
}

/// Class probabilities under the chosen consensus function. Max consensus
/// yields raw logits, so those are pushed through a softmax here; the other
/// kinds already produce probabilities.
pub fn consensus_probs(
    kind: ConsensusKind,
    model: &StreamModel,
    features: &FeatureSet,
) -> Result<Vec<f64>> {
    let scores = consensus(kind, model, features)?;
    match kind {
        ConsensusKind::Max => softmax(&scores),
        ConsensusKind::Average | ConsensusKind::Attention => Ok(scores),
    }
}

/// Gradients of the per-video cross-entropy loss with respect to every
/// trainable parameter array of a [`StreamModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct StreamGradients {
    pub attention_weight: Vec<f64>,
    pub attention_bias: f64,
    pub classifier_weight: Matrix,
    pub classifier_bias: Vec<f64>,
}

impl StreamGradients {
    pub fn zeros(model: &StreamModel) -> Self {
        StreamGradients {
            attention_weight: vec![0.0; model.feature_dim()],
            attention_bias: 0.0,
            classifier_weight: Matrix::zeros(model.num_classes(), model.feature_dim()),
            classifier_bias: vec![0.0; model.num_classes()],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.attention_weight {
            *v *= factor;
        }
        self.attention_bias *= factor;
        for v in self.classifier_weight.data_mut() {
            *v *= factor;
        }
        for v in &mut self.classifier_bias {
            *v *= factor;
        }
    }

    pub fn add(&mut self, other: &StreamGradients) {
        axpy(&mut self.attention_weight, &other.attention_weight, 1.0);
        self.attention_bias += other.attention_bias;
        axpy(
            self.classifier_weight.data_mut(),
            other.classifier_weight.data(),
            1.0,
        );
        axpy(&mut self.classifier_bias, &other.classifier_bias, 1.0);
    }

    pub fn is_finite(&self) -> bool {
        self.attention_weight.iter().all(|v| v.is_finite())
            && self.attention_bias.is_finite()
            && self.classifier_weight.is_finite()
            && self.classifier_bias.iter().all(|v| v.is_finite())
    }
}

/// Loss and gradients from one per-video backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub grads: StreamGradients,
}

/// Analytic backward pass of `cross_entropy(consensus_probs(...), label)`
/// through the attention pipeline. Covers both placements; the softmax
/// Jacobian over snippet weights and the activation derivative are applied
/// exactly, with the relu subgradient at 0 taken as 0.
pub fn attention_backward(
    model: &StreamModel,
    features: &FeatureSet,
    label: usize,
) -> Result<Backward> {
    consensus_backward(ConsensusKind::Attention, model, features, label)
}

/// Backward pass for any consensus kind. Average consensus leaves the
/// attention parameters untouched (they are not on its path); max consensus
/// routes each class gradient to the argmax snippet (a subgradient).
pub fn consensus_backward(
    kind: ConsensusKind,
    model: &StreamModel,
    features: &FeatureSet,
    label: usize,
) -> Result<Backward> {
    if label >= model.num_classes() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            model.num_classes()
        )));
    }
    if features.rows() == 0 {
        return Err(Error::invalid("backward over zero snippets"));
    }
    match kind {
        ConsensusKind::Attention => attention_backward_impl(model, features, label),
        ConsensusKind::Average => average_backward(model, features, label),
        ConsensusKind::Max => max_backward(model, features, label),
    }
}

fn attention_backward_impl(
    model: &StreamModel,
    features: &FeatureSet,
    label: usize,
) -> Result<Backward> {
    let params = &model.attention;
    let n = features.rows();

    // forward, keeping pre-activations for the activation derivative
    let pre_scores: Vec<f64> = features
        .matrix
        .iter_rows()
        .map(|row| dot(&params.weight, row) + params.bias)
        .collect();
    let scores: Vec<f64> = pre_scores
        .iter()
        .map(|&u| params.activation.apply_scalar(u))
        .collect();
    let weights = softmax(&scores)?;

    let logits = attention_logits(model, features)?;
    let probs = softmax(&logits)?;
    let loss = cross_entropy(&probs, label)?;

    // d loss / d logits = probs - onehot(label)
    let mut dlogits = probs;
    dlogits[label] -= 1.0;

    let mut grads = StreamGradients::zeros(model);
    grads.classifier_bias.copy_from_slice(&dlogits);

    // Per-snippet scalar sensitivities d loss / d weights[i] before the
    // softmax Jacobian.
    let dweights: Vec<f64> = match model.placement {
        Placement::Feature => {
            let aggregate = aggregate_attention(&weights, features)?;
            grads.classifier_weight.add_outer(&dlogits, &aggregate, 1.0);
            let dagg = model.classifier.weight.t_matvec(&dlogits)?;
            features
                .matrix
                .iter_rows()
                .map(|row| dot(&dagg, row))
                .collect()
        }
        Placement::Logit => {
            // classifier gradient: Σ_i weights[i] · dlogits ⊗ row_i
            for (w, row) in weights.iter().zip(features.matrix.iter_rows()) {
                grads.classifier_weight.add_outer(&dlogits, row, *w);
            }
            features
                .matrix
                .iter_rows()
                .map(|row| {
                    model
                        .classifier
                        .logits(row)
                        .map(|snippet_logits| dot(&dlogits, &snippet_logits))
                })
                .collect::<Result<Vec<f64>>>()?
        }
    };

    // softmax Jacobian: d loss / d scores[i]
    //   = weights[i] * (dweights[i] - Σ_j weights[j] * dweights[j])
    let weighted_mean = dot(&weights, &dweights);
    for i in 0..n {
        let dscore = weights[i] * (dweights[i] - weighted_mean);
        let dpre = dscore * params.activation.derivative(pre_scores[i]);
        axpy(&mut grads.attention_weight, features.row(i), dpre);
        grads.attention_bias += dpre;
    }

    Ok(Backward { loss, grads })
}

fn average_backward(model: &StreamModel, features: &FeatureSet, label: usize) -> Result<Backward> {
    let n = features.rows();
    let per_snippet_probs: Vec<Vec<f64>> = features
        .matrix
        .iter_rows()
        .map(|row| softmax(&model.classifier.logits(row)?))
        .collect::<Result<_>>()?;
    let mut mean_probs = vec![0.0; model.num_classes()];
    for probs in &per_snippet_probs {
        axpy(&mut mean_probs, probs, 1.0);
    }
    for p in &mut mean_probs {
        *p /= n as f64;
    }
    let loss = cross_entropy(&mean_probs, label)?;

    // loss = -ln(mean_probs[label]); chain through each snippet softmax:
    // d loss / d logits_i = -(p_i[label] / (n * mean_probs[label]))
    //                       * (onehot(label) - p_i)
    let mut grads = StreamGradients::zeros(model);
    let denom = n as f64 * mean_probs[label].max(crate::math::PROB_FLOOR);
    for (probs, row) in per_snippet_probs.iter().zip(features.matrix.iter_rows()) {
        let coeff = -probs[label] / denom;
        let mut dlogits: Vec<f64> = probs.iter().map(|p| coeff * (0.0 - p)).collect();
        dlogits[label] = coeff * (1.0 - probs[label]);
        grads.classifier_weight.add_outer(&dlogits, row, 1.0);
        axpy(&mut grads.classifier_bias, &dlogits, 1.0);
    }
    Ok(Backward { loss, grads })
}

fn max_backward(model: &StreamModel, features: &FeatureSet, label: usize) -> Result<Backward> {
    let per_snippet_logits: Vec<Vec<f64>> = features
        .matrix
        .iter_rows()
        .map(|row| model.classifier.logits(row))
        .collect::<Result<_>>()?;
    let classes = model.num_classes();
    // winner snippet per class; first index wins ties
    let mut maxed = vec![f64::NEG_INFINITY; classes];
    let mut winner = vec![0usize; classes];
    for (i, logits) in per_snippet_logits.iter().enumerate() {
        for (c, &l) in logits.iter().enumerate() {
            if l > maxed[c] {
                maxed[c] = l;
                winner[c] = i;
            }
        }
    }
    let probs = softmax(&maxed)?;
    let loss = cross_entropy(&probs, label)?;

    let mut dlogits = probs;
    dlogits[label] -= 1.0;
    let mut grads = StreamGradients::zeros(model);
    grads.classifier_bias.copy_from_slice(&dlogits);
    for (c, &d) in dlogits.iter().enumerate() {
        let row = features.row(winner[c]);
        let weight_row = grads.classifier_weight.row_mut(c);
        for (w, &x) in weight_row.iter_mut().zip(row) {
            *w += d * x;
        }
    }
    Ok(Backward { loss, grads })
}
