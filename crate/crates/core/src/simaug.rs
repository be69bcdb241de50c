//! Multi-view adversarial mixup augmentation for the grid predictor.
//!
//! One step, for an anchor view and its sibling views of the same trajectory:
//! perturb the anchor's scene features with bounded uniform noise, pick the
//! view whose labels the model fits worst on those features, push the anchor
//! features one signed gradient step towards that view's labels, and mix the
//! result with the chosen view by a Beta-distributed weight.
//!
//! Scene features are static per view (one `cells x classes` map), not one
//! map per observed step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::gridnet::{
    cls_loss, cls_loss_and_feature_grad, mean_loss_and_gradients, train_with, Gradients, LossBreakdown, LossConfig,
    ModelParams, SceneBatch, SoftLabel, TrainConfig, TrainExample, TrainOutput,
};
use crate::types::SceneFeatures;

/// One trajectory as seen from one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSample {
    pub view_id: String,
    pub features: SceneFeatures,
    pub example: TrainExample,
}

impl ViewSample {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.features.cells != grid.num_cells() || self.features.values.len() != self.features.cells * self.features.channels {
            return Err(Error::DimensionMismatch(format!(
                "view {}: features for {} cells, grid has {}",
                self.view_id,
                self.features.cells,
                grid.num_cells()
            )));
        }
        self.example.validate(grid.num_cells())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    /// Fixed mixing weight instead of a Beta draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_lambda: Option<f64>,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            alpha: 0.2,
            epsilon: 0.1,
            delta: 0.1,
            seed: 0,
            forced_lambda: None,
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument("alpha must be positive".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite() && self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument("epsilon and delta must be non-negative".into()));
        }
        if let Some(l) = self.forced_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidArgument(format!("forced lambda {l} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn draw_lambda(&self, rng: &mut ChaCha8Rng) -> Result<f64> {
        match self.forced_lambda {
            Some(l) => Ok(l),
            None => sample_beta(self.alpha, rng),
        }
    }
}

pub fn sample_beta(alpha: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidArgument(format!("beta({alpha}): {e}")))?;
    Ok(beta.sample(rng))
}

/// Adds i.i.d. uniform `[-delta, delta]` noise to every entry.
pub fn perturb_random(features: &SceneFeatures, delta: f64, rng: &mut ChaCha8Rng) -> Result<SceneFeatures> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument("delta must be non-negative".into()));
    }
    let mut out = features.clone();
    if delta > 0.0 {
        for v in &mut out.values {
            *v += rng.random_range(-delta..=delta);
        }
    }
    Ok(out)
}

/// Index of the view whose labels have the highest classification loss on
/// `features`; ties go to the lowest index.
pub fn hardest_view_on(features: &SceneFeatures, views: &[ViewSample], params: &ModelParams) -> Result<usize> {
    if views.is_empty() {
        return Err(Error::Empty("view list".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (j, v) in views.iter().enumerate() {
        let loss = cls_loss(params, features, &v.example)?;
        if loss > best.1 {
            best = (j, loss);
        }
    }
    Ok(best.0)
}

/// Perturbs the anchor's features (`views[anchor]`) and returns the hardest
/// view on them.
pub fn select_hardest_view(
    views: &[ViewSample],
    anchor: usize,
    params: &ModelParams,
    delta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let a = views.get(anchor).ok_or(Error::IndexOutOfRange { index: anchor, len: views.len() })?;
    let perturbed = perturb_random(&a.features, delta, rng)?;
    hardest_view_on(&perturbed, views, params)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `features - epsilon * sign(grad)`, with the gradient of the target's
/// classification loss taken at `at` (the perturbed features).
pub fn fgsm_targeted_at(
    features: &SceneFeatures,
    at: &SceneFeatures,
    params: &ModelParams,
    target: &TrainExample,
    epsilon: f64,
) -> Result<SceneFeatures> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument("epsilon must be non-negative".into()));
    }
    if !features.same_shape(at) {
        return Err(Error::DimensionMismatch("attack features vs evaluation point".into()));
    }
    let (_, grad) = cls_loss_and_feature_grad(params, at, target)?;
    let mut out = features.clone();
    if epsilon > 0.0 {
        for (v, g) in out.values.iter_mut().zip(&grad) {
            *v -= epsilon * sign(*g);
        }
    }
    Ok(out)
}

/// Targeted sign-gradient step with the gradient taken at `features` itself.
pub fn fgsm_targeted(
    features: &SceneFeatures,
    params: &ModelParams,
    target: &TrainExample,
    epsilon: f64,
) -> Result<SceneFeatures> {
    fgsm_targeted_at(features, features, params, target, epsilon)
}

/// Convex combination `lambda * adv + (1 - lambda) * hardest` of features,
/// start distributions and per-step labels. The regression target stays the
/// adversarial (original view) one.
pub fn mixup_with_lambda(adv: &ViewSample, hardest: &ViewSample, lambda: f64) -> Result<ViewSample> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    if !adv.features.same_shape(&hardest.features) {
        return Err(Error::DimensionMismatch("mixup features".into()));
    }
    if adv.example.labels.len() != hardest.example.labels.len() {
        return Err(Error::LengthMismatch("mixup label sequences".into()));
    }
    let mut features = adv.features.clone();
    for (v, h) in features.values.iter_mut().zip(&hardest.features.values) {
        *v = lambda * *v + (1.0 - lambda) * h;
    }
    let labels = adv
        .example
        .labels
        .iter()
        .zip(&hardest.example.labels)
        .map(|(a, b)| SoftLabel::mix(a, b, lambda))
        .collect();
    Ok(ViewSample {
        view_id: adv.view_id.clone(),
        features,
        example: TrainExample {
            start: SoftLabel::mix(&adv.example.start, &hardest.example.start, lambda),
            labels,
            regression: adv.example.regression.clone(),
        },
    })
}

/// Mixup with `lambda ~ Beta(alpha, alpha)`; returns the sample and lambda.
pub fn mixup_augment(
    adv: &ViewSample,
    hardest: &ViewSample,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(ViewSample, f64)> {
    let lambda = sample_beta(alpha, rng)?;
    Ok((mixup_with_lambda(adv, hardest, lambda)?, lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSample {
    pub sample: ViewSample,
    pub hardest: usize,
    pub lambda: f64,
}

/// One augmentation step for `views[anchor]`: perturb, select the hardest
/// view, attack towards it, mix.
pub fn simaug_step(
    views: &[ViewSample],
    anchor: usize,
    params: &ModelParams,
    cfg: &AugConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedSample> {
    cfg.validate()?;
    let a = views.get(anchor).ok_or(Error::IndexOutOfRange { index: anchor, len: views.len() })?;
    for v in views {
        v.validate(&params.grid)?;
    }
    let perturbed = perturb_random(&a.features, cfg.delta, rng)?;
    let hardest = hardest_view_on(&perturbed, views, params)?;
    let adv_features = fgsm_targeted_at(&a.features, &perturbed, params, &views[hardest].example, cfg.epsilon)?;
    let adv = ViewSample {
        view_id: a.view_id.clone(),
        features: adv_features,
        example: a.example.clone(),
    };
    let lambda = cfg.draw_lambda(rng)?;
    Ok(AugmentedSample {
        sample: mixup_with_lambda(&adv, &views[hardest], lambda)?,
        hardest,
        lambda,
    })
}

/// The views of one training trajectory and which of them is the anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewItem {
    pub anchor: usize,
    pub views: Vec<ViewSample>,
}

/// Augments every item with fresh draws from `rng`.
pub fn augment_items(
    items: &[MultiViewItem],
    params: &ModelParams,
    cfg: &AugConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AugmentedSample>> {
    items
        .iter()
        .map(|it| simaug_step(&it.views, it.anchor, params, cfg, rng))
        .collect()
}

/// Mean training loss over a freshly augmented copy of `items`.
pub fn simaug_loss_and_gradients(
    items: &[MultiViewItem],
    params: &ModelParams,
    aug: &AugConfig,
    loss: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, Gradients)> {
    let augmented = augment_items(items, params, aug, rng)?;
    let batches: Vec<SceneBatch<'_>> = augmented
        .iter()
        .map(|a| SceneBatch {
            features: &a.sample.features,
            examples: std::slice::from_ref(&a.sample.example),
        })
        .collect();
    mean_loss_and_gradients(&batches, params, loss)
}

/// Gradient descent where every epoch trains on a new augmentation of the
/// items.
pub fn train_simaug(
    items: &[MultiViewItem],
    grid: GridSpec,
    num_classes: usize,
    train: &TrainConfig,
    aug: &AugConfig,
) -> Result<TrainOutput> {
    if items.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    aug.validate()?;
    let loss_cfg = train.loss_config();
    train_with(grid, num_classes, train, |params, rng| {
        simaug_loss_and_gradients(items, params, aug, &loss_cfg, rng)
    })
}
