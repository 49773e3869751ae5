//! Verifier optimization: negative log likelihood loss, Adam with L2 weight
//! decay, gradient accumulation over variable-size evidence graphs, and
//! early stopping on validation label accuracy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, Label, LabeledExample};
use crate::encoder::PrecomputedFeatures;
use crate::error::{GearError, Result};
use crate::model::{lift, GearConfig, GearParams};
use crate::tensorcore::{Graph, Matrix, Node};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Gradients are accumulated over this many single-example graphs before
    /// one optimizer step, emulating batches without padding. 256 matches
    /// the full-scale setup; 32 is the desk default.
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-3,
            weight_decay: 5e-4,
            batch_size: 32,
            patience: 20,
            max_epochs: 200,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.weight_decay < 0.0
            || self.batch_size == 0
            || self.max_epochs == 0
        {
            return Err(GearError::Config(format!(
                "bad training config: lr {}, decay {}, batch {}, max_epochs {}",
                self.learning_rate, self.weight_decay, self.batch_size, self.max_epochs
            )));
        }
        if self.patience == 0 {
            return Err(GearError::Config("patience must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// `-log(probs[gold])`, with the probability clamped at 1e-12 so the loss
/// stays finite.
pub fn nll_loss(g: &mut Graph, probs: Node, gold: Label) -> Result<Node> {
    let picked = g.entry(probs, gold.index())?;
    g.neg_ln(picked)
}

/// Adam moment estimates, aligned entry-by-entry with
/// [`GearParams::visit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &GearParams) -> Self {
        let shapes: Vec<Matrix> = params
            .visit()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        AdamState {
            m: shapes.clone(),
            v: shapes,
            step: 0,
        }
    }

    /// One bias-corrected Adam step. Weight decay enters as an L2 term added
    /// to the gradient, not as decoupled decay.
    pub fn apply(
        &mut self,
        params: &mut GearParams,
        grads: &[Matrix],
        learning_rate: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let mut entries = params.visit_mut();
        if entries.len() != grads.len() || entries.len() != self.m.len() {
            return Err(GearError::Config(format!(
                "optimizer state for {} parameters applied to {} gradients",
                self.m.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for (k, (_, value)) in entries.iter_mut().enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let g = grads[k].data();
            let theta = value.data_mut();
            for i in 0..theta.len() {
                let grad = g[i] + weight_decay * theta[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad * grad;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                theta[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
        Ok(())
    }
}

/// One prepared training instance: the claim with its selected evidence
/// texts.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: u64,
    pub claim: String,
    pub evidence: Vec<String>,
    pub label: Label,
}

impl TrainExample {
    pub fn from_labeled(ex: &LabeledExample) -> Result<Self> {
        if ex.retrieved.is_empty() {
            return Err(GearError::Validation(format!(
                "example {} has no retrieved evidence; run selection first",
                ex.id
            )));
        }
        Ok(TrainExample {
            id: ex.id,
            claim: ex.claim.clone(),
            evidence: ex.retrieved.iter().map(|s| s.text.clone()).collect(),
            label: ex.label,
        })
    }

    pub fn from_split(split: &DatasetSplit) -> Result<Vec<Self>> {
        split.examples.iter().map(Self::from_labeled).collect()
    }
}

/// Early-stopping bookkeeping on a maximized metric.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    best: Option<f64>,
    pub epochs_since_improvement: usize,
    patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            best: None,
            epochs_since_improvement: 0,
            patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Strict improvement resets the counter; `stop` turns true once
    /// `patience` consecutive epochs pass without improvement.
    pub fn observe(&mut self, value: f64) -> StopDecision {
        let improved = self.best.map_or(true, |b| value > b);
        if improved {
            self.best = Some(value);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        StopDecision {
            improved,
            stop: self.epochs_since_improvement >= self.patience,
        }
    }
}

/// Mutable training state threaded through epochs.
#[derive(Debug)]
pub struct TrainState {
    pub params: GearParams,
    pub adam: AdamState,
    pub epoch: usize,
    pub best_accuracy: f64,
}

impl TrainState {
    pub fn new(params: GearParams) -> Self {
        let adam = AdamState::new(&params);
        TrainState {
            params,
            adam,
            epoch: 0,
            best_accuracy: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
}

/// One pass over the training data: deterministic (seed, epoch) shuffle,
/// per-example graphs, gradient accumulation over `batch_size` examples per
/// Adam step, mean NLL returned.
pub fn train_epoch(
    state: &mut TrainState,
    config: &TrainConfig,
    gear: &GearConfig,
    features: Option<&PrecomputedFeatures>,
    examples: &[TrainExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(GearError::Validation("empty training split".to_string()));
    }
    state.epoch += 1;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(
        config
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(state.epoch as u64),
    );
    order.shuffle(&mut rng);

    let mut accum: Vec<Matrix> = state
        .params
        .visit()
        .iter()
        .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
        .collect();
    let mut pending = 0usize;
    let mut total_loss = 0.0;

    for &idx in &order {
        let ex = &examples[idx];
        let mut g = Graph::new();
        let model = lift(&mut g, gear, &state.params, features, true)?;
        let fp = model.forward(&mut g, ex.id, &ex.claim, &ex.evidence)?;
        let loss = nll_loss(&mut g, fp.probs, ex.label)?;
        total_loss += g.scalar(loss);
        g.backward(loss)?;
        for (k, (_, node)) in model.param_nodes.iter().enumerate() {
            accum[k].add_assign(g.grad(*node))?;
        }
        pending += 1;
        if pending == config.batch_size {
            step(state, &mut accum, pending, config)?;
            pending = 0;
        }
    }
    if pending > 0 {
        step(state, &mut accum, pending, config)?;
    }
    Ok(total_loss / examples.len() as f64)
}

fn step(
    state: &mut TrainState,
    accum: &mut [Matrix],
    count: usize,
    config: &TrainConfig,
) -> Result<()> {
    for m in accum.iter_mut() {
        m.scale_assign(1.0 / count as f64);
    }
    state.adam.apply(
        &mut state.params,
        accum,
        config.learning_rate,
        config.weight_decay,
    )?;
    for m in accum.iter_mut() {
        m.fill(0.0);
    }
    Ok(())
}

/// Label accuracy of frozen parameters on a prepared example set.
pub fn evaluate_accuracy(
    gear: &GearConfig,
    params: &GearParams,
    features: Option<&PrecomputedFeatures>,
    examples: &[TrainExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for ex in examples {
        let output =
            crate::model::predict(gear, params, features, ex.id, &ex.claim, &ex.evidence)?;
        if output.predicted_label == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Trains with early stopping on dev label accuracy and returns the best
/// parameter snapshot with the per-epoch history.
pub fn fit(
    config: &TrainConfig,
    gear: &GearConfig,
    features: Option<&PrecomputedFeatures>,
    train_examples: &[TrainExample],
    dev_examples: &[TrainExample],
) -> Result<(GearParams, TrainHistory)> {
    config.validate()?;
    if dev_examples.is_empty() {
        return Err(GearError::Validation("empty dev split".to_string()));
    }
    let params = GearParams::init(gear, config.seed)?;
    let mut state = TrainState::new(params);
    let mut best = state.params.clone();
    let mut history = TrainHistory::default();
    let mut stopping = EarlyStopping::new(config.patience);

    for _ in 0..config.max_epochs {
        let train_loss = train_epoch(&mut state, config, gear, features, train_examples)?;
        let dev_accuracy = evaluate_accuracy(gear, &state.params, features, dev_examples)?;
        history.epochs.push(EpochRecord {
            epoch: state.epoch,
            train_loss,
            dev_accuracy,
        });
        let decision = stopping.observe(dev_accuracy);
        if decision.improved {
            best = state.params.clone();
            history.best_epoch = state.epoch;
            history.best_accuracy = dev_accuracy;
            state.best_accuracy = dev_accuracy;
        }
        if decision.stop {
            break;
        }
    }
    Ok((best, history))
}

/// Versioned, byte-stable training artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub gear: GearConfig,
    pub train: TrainConfig,
    pub params: GearParams,
    pub history: TrainHistory,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(
        gear: GearConfig,
        train: TrainConfig,
        params: GearParams,
        history: TrainHistory,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            gear,
            train,
            params,
            history,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &str) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| GearError::Io {
            path: path.to_string(),
            source,
        })
    }

    pub fn load(path: &str) -> Result<Checkpoint> {
        let raw = std::fs::read_to_string(path).map_err(|source| GearError::Io {
            path: path.to_string(),
            source,
        })?;
        let ckpt: Checkpoint =
            serde_json::from_str(&raw).map_err(|e| GearError::Parse {
                path: path.to_string(),
                line: 0,
                message: e.to_string(),
            })?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(GearError::Config(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::AggregatorKind;
    use crate::encoder::EncoderConfig;
    use crate::tensorcore::check_gradients;

    fn tiny_gear(num_layers: usize) -> GearConfig {
        GearConfig {
            encoder: EncoderConfig::hashed_bow(6, 16),
            hidden_dim: 4,
            num_layers,
            aggregator: AggregatorKind::Attention,
            classifier_relu: true,
        }
    }

    fn one_example() -> TrainExample {
        TrainExample {
            id: 1,
            claim: "Alex Stone is a member of a band that performs jazz music.".to_string(),
            evidence: vec![
                "Alex Stone is a member of The Stone Rebels.".to_string(),
                "The Stone Rebels performs jazz music.".to_string(),
            ],
            label: Label::Supported,
        }
    }

    #[test]
    fn nll_of_uniform_is_ln_three() {
        let mut g = Graph::new();
        let probs = g.constant(Matrix::column(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap());
        let loss = nll_loss(&mut g, probs, Label::Refuted).unwrap();
        assert!((g.scalar(loss) - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_is_clamped_at_zero_probability() {
        let mut g = Graph::new();
        let probs = g.constant(Matrix::column(&[1.0, 0.0, 0.0]).unwrap());
        let sup = nll_loss(&mut g, probs, Label::Supported).unwrap();
        assert!(g.scalar(sup).abs() < 1e-12);
        let nei = nll_loss(&mut g, probs, Label::NotEnoughInfo).unwrap();
        assert!(g.scalar(nei).is_finite());
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let params = vec![(
            "probs".to_string(),
            Matrix::column(&[0.2, 0.5, 0.3]).unwrap(),
        )];
        let report = check_gradients(
            |g, ps| nll_loss(g, ps[0], Label::Refuted),
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn early_stopping_patience_arithmetic() {
        // Sequence 0.5, 0.6, then twenty non-improvements: stop fires at
        // epoch 22 with the best seen at epoch 2.
        let mut stopping = EarlyStopping::new(20);
        assert!(stopping.observe(0.5).improved);
        assert!(stopping.observe(0.6).improved);
        let mut stopped_at = None;
        for epoch in 3..=30 {
            let decision = stopping.observe(0.6);
            assert!(!decision.improved);
            if decision.stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(22));
        assert_eq!(stopping.best(), Some(0.6));
    }

    #[test]
    fn early_stopping_patience_one() {
        let mut stopping = EarlyStopping::new(1);
        assert!(!stopping.observe(0.9).stop);
        let second = stopping.observe(0.8);
        assert!(second.stop, "stops after epoch 2");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let gear = tiny_gear(1);
        let config = TrainConfig {
            learning_rate: 1e-300, // validate() rejects 0; this is as close as it gets
            weight_decay: 0.0,
            batch_size: 4,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let params = GearParams::init(&gear, 1).unwrap();
        let mut state = TrainState::new(params.clone());
        let examples = vec![one_example()];
        train_epoch(&mut state, &config, &gear, None, &examples).unwrap();
        for ((_, a), (_, b)) in params.visit().iter().zip(state.params.visit()) {
            assert!(a.max_abs_diff(b) < 1e-250);
        }
    }

    #[test]
    fn single_example_training_drives_loss_down() {
        let gear = tiny_gear(1);
        // No decay here: L2 pull keeps the single-example loss away from
        // zero, which is exactly what this test is not about. Seed 3 is a
        // dead draw for this tiny config (every classifier preactivation
        // starts negative, so the inner ReLU blocks all gradient); seed 1
        // is live.
        let config = TrainConfig {
            learning_rate: 1e-2,
            weight_decay: 0.0,
            batch_size: 1,
            seed: 1,
            ..TrainConfig::default()
        };
        let params = GearParams::init(&gear, 1).unwrap();
        let mut state = TrainState::new(params);
        let examples = vec![one_example()];
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses.push(train_epoch(&mut state, &config, &gear, None, &examples).unwrap());
        }
        let final_loss = *losses.last().unwrap();
        assert!(final_loss < 0.05, "final loss {final_loss}");
        let decreases = losses
            .windows(2)
            .filter(|w| w[1] <= w[0] + 1e-12)
            .count();
        assert!(
            decreases as f64 >= 0.95 * (losses.len() - 1) as f64,
            "only {decreases} monotone steps"
        );
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let gear = tiny_gear(1);
        let config = TrainConfig {
            batch_size: 2,
            max_epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let examples: Vec<TrainExample> = vec![
            one_example(),
            TrainExample {
                id: 2,
                claim: "Maya Vale is a member of a band that performs folk music.".to_string(),
                evidence: vec![
                    "Maya Vale is a member of The Vale Harbor.".to_string(),
                    "The Vale Harbor performs techno music.".to_string(),
                ],
                label: Label::Refuted,
            },
        ];
        let run = || {
            let params = GearParams::init(&gear, config.seed).unwrap();
            let mut state = TrainState::new(params);
            for _ in 0..3 {
                train_epoch(&mut state, &config, &gear, None, &examples).unwrap();
            }
            state.params
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn one_adam_step_is_order_learning_rate() {
        let gear = tiny_gear(0);
        let config = TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.0,
            batch_size: 1,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let params = GearParams::init(&gear, 5).unwrap();
        let mut state = TrainState::new(params.clone());
        train_epoch(&mut state, &config, &gear, None, &[one_example()]).unwrap();
        for ((_, before), (_, after)) in params.visit().iter().zip(state.params.visit()) {
            // First Adam step moves each coordinate by at most ~lr.
            assert!(before.max_abs_diff(after) <= 2.0 * config.learning_rate);
        }
    }

    #[test]
    fn fit_returns_best_snapshot_and_history() {
        let gear = tiny_gear(1);
        let config = TrainConfig {
            batch_size: 2,
            max_epochs: 8,
            patience: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        let train: Vec<TrainExample> = vec![one_example()];
        let dev = train.clone();
        let (best, history) = fit(&config, &gear, None, &train, &dev).unwrap();
        assert!(!history.epochs.is_empty());
        assert!(history.best_accuracy >= history.epochs[0].dev_accuracy - 1e-12);
        let acc = evaluate_accuracy(&gear, &best, None, &dev).unwrap();
        assert!((acc - history.best_accuracy).abs() < 1e-12);
        // Best accuracy is the max over evaluated epochs.
        let max_acc = history
            .epochs
            .iter()
            .map(|e| e.dev_accuracy)
            .fold(0.0, f64::max);
        assert_eq!(acc, max_acc);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let gear = tiny_gear(1);
        let params = GearParams::init(&gear, 2).unwrap();
        let ckpt = Checkpoint::new(
            gear,
            TrainConfig::default(),
            params,
            TrainHistory::default(),
        );
        let a = ckpt.to_json();
        let reloaded: Checkpoint = serde_json::from_str(&a).unwrap();
        assert_eq!(reloaded.to_json(), a);
        assert_eq!(reloaded.params, ckpt.params);
    }
}
