//! Finite-difference verification harness for every analytic backward pass.
//!
//! Random stream models and feature sets are drawn across the full shape
//! range (1..=8 snippets, 2..=32 dims, 2..=8 classes), cycling through all
//! activations and both placements, and each gradient is compared against
//! [`crate::math::finite_diff_grad`]. Instances whose loss surface has a kink
//! inside the difference stencil (relu pre-activation near zero, near-tied
//! max logits) are re-drawn; central differences are meaningless across a
//! kink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{
    consensus_backward, consensus_probs, AttentionParams, Classifier, ConsensusKind, Placement,
    StreamGradients, StreamModel,
};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::math::{cross_entropy, finite_diff_grad, grad_rel_error, Activation, Matrix};
use crate::pipeline::Modality;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub eps: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 100,
            seed: 0,
            tolerance: 1e-5,
            eps: 1e-6,
        }
    }
}

/// One failed comparison, for diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckFailure {
    pub trial: usize,
    pub kind: String,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub checks: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn flatten_params(model: &StreamModel) -> Vec<f64> {
    let mut flat = model.attention.weight.clone();
    flat.push(model.attention.bias);
    flat.extend_from_slice(model.classifier.weight.data());
    flat.extend_from_slice(&model.classifier.bias);
    flat
}

fn unflatten_params(template: &StreamModel, flat: &[f64]) -> StreamModel {
    let dim = template.feature_dim();
    let classes = template.num_classes();
    let mut model = template.clone();
    model.attention.weight.copy_from_slice(&flat[..dim]);
    model.attention.bias = flat[dim];
    let w_end = dim + 1 + classes * dim;
    model
        .classifier
        .weight
        .data_mut()
        .copy_from_slice(&flat[dim + 1..w_end]);
    model.classifier.bias.copy_from_slice(&flat[w_end..]);
    model
}

fn flatten_grads(grads: &StreamGradients) -> Vec<f64> {
    let mut flat = grads.attention_weight.clone();
    flat.push(grads.attention_bias);
    flat.extend_from_slice(grads.classifier_weight.data());
    flat.extend_from_slice(&grads.classifier_bias);
    flat
}

/// Margin that keeps the difference stencil clear of subgradient kinks.
const KINK_MARGIN: f64 = 1e-4;

struct Instance {
    model: StreamModel,
    features: FeatureSet,
    label: usize,
}

fn draw_instance(rng: &mut ChaCha8Rng, activation: Activation, placement: Placement) -> Instance {
    let n = rng.gen_range(1..=8);
    let dim = rng.gen_range(2..=32);
    let classes = rng.gen_range(2..=8);
    let features = FeatureSet::new(
        Modality::Rgb,
        Matrix::from_vec(
            n,
            dim,
            (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .expect("shape is consistent"),
    );
    let attention = AttentionParams {
        weight: (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        bias: rng.gen_range(-0.5..0.5),
        activation,
    };
    let classifier = Classifier {
        weight: Matrix::from_vec(
            classes,
            dim,
            (0..classes * dim)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
        )
        .expect("shape is consistent"),
        bias: (0..classes).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    };
    let label = rng.gen_range(0..classes);
    Instance {
        model: StreamModel::new(attention, classifier, placement).expect("dims agree"),
        features,
        label,
    }
}

/// True when the instance keeps every kink at least [`KINK_MARGIN`] away from
/// the finite-difference stencil for the consensus kind under test.
fn instance_is_smooth(instance: &Instance, kind: ConsensusKind) -> bool {
    let model = &instance.model;
    let features = &instance.features;
    match kind {
        ConsensusKind::Attention => {
            if model.attention.activation != Activation::Relu {
                return true;
            }
            features.matrix.iter_rows().all(|row| {
                let pre = crate::math::dot(&model.attention.weight, row) + model.attention.bias;
                pre.abs() > KINK_MARGIN
            })
        }
        ConsensusKind::Average => true,
        ConsensusKind::Max => {
            // per class, the winning logit must beat the runner-up clearly
            let logits: Vec<Vec<f64>> = features
                .matrix
                .iter_rows()
                .map(|row| model.classifier.logits(row).expect("dims agree"))
                .collect();
            if logits.len() < 2 {
                return true;
            }
            (0..model.num_classes()).all(|c| {
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for l in &logits {
                    let v = l[c];
                    if v > best {
                        second = best;
                        best = v;
                    } else if v > second {
                        second = v;
                    }
                }
                best - second > KINK_MARGIN
            })
        }
    }
}

fn check_one(instance: &Instance, kind: ConsensusKind, eps: f64) -> Result<f64> {
    let backward = consensus_backward(kind, &instance.model, &instance.features, instance.label)?;
    let analytic = flatten_grads(&backward.grads);
    let flat = flatten_params(&instance.model);
    let numeric = finite_diff_grad(
        |p| {
            let candidate = unflatten_params(&instance.model, p);
            let probs = consensus_probs(kind, &candidate, &instance.features)?;
            cross_entropy(&probs, instance.label)
        },
        &flat,
        eps,
    )?;
    Ok(grad_rel_error(&analytic, &numeric))
}

/// Run the whole suite: for each trial, one attention check (activation and
/// placement cycling through all combinations) plus one average and one max
/// consensus check.
pub fn run_gradcheck(config: &GradCheckConfig) -> Result<GradCheckReport> {
    if config.eps <= 0.0 || config.tolerance <= 0.0 {
        return Err(Error::invalid("eps and tolerance must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut max_rel_error: f64 = 0.0;
    let mut failures = Vec::new();
    let mut checks = 0usize;

    let combos: Vec<(Activation, Placement)> = Activation::ALL
        .into_iter()
        .flat_map(|a| [Placement::Feature, Placement::Logit].map(|p| (a, p)))
        .collect();

    for trial in 0..config.trials {
        let (activation, placement) = combos[trial % combos.len()];
        for kind in [
            ConsensusKind::Attention,
            ConsensusKind::Average,
            ConsensusKind::Max,
        ] {
            let mut instance = draw_instance(&mut rng, activation, placement);
            let mut redraws = 0;
            while !instance_is_smooth(&instance, kind) {
                instance = draw_instance(&mut rng, activation, placement);
                redraws += 1;
                if redraws > 200 {
                    return Err(Error::OracleFailure(
                        "could not draw a kink-free instance".into(),
                    ));
                }
            }
            let rel = check_one(&instance, kind, config.eps)?;
            checks += 1;
            max_rel_error = max_rel_error.max(rel);
            if rel >= config.tolerance {
                failures.push(GradCheckFailure {
                    trial,
                    kind: format!("{kind:?}/{activation:?}/{placement:?}"),
                    rel_error: rel,
                });
            }
        }
    }
    Ok(GradCheckReport {
        trials: config.trials,
        checks,
        max_rel_error,
        failures,
    })
}
