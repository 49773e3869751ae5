//! The full verifier: encoder, stacked reasoning layers, aggregator and
//! classifier wired into one forward pass, with every learnable weight
//! reachable through one flat, stably-ordered parameter list.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{
    aggregate, classify, AggregatorKind, AggregatorParams, LiftedAggregator, VerifierOutput,
};
use crate::encoder::{
    EncoderConfig, EncoderKind, HashedBowParams, LiftedEncoder, PrecomputedFeatures,
};
use crate::ernet::{run_ernet, ErNetConfig, ErNetLayerParams, HiddenStates, LiftedErNetLayer};
use crate::error::{GearError, Result};
use crate::tensorcore::{Graph, Matrix, Node};

pub const NUM_LABELS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GearConfig {
    pub encoder: EncoderConfig,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub aggregator: AggregatorKind,
    /// The printed classifier applies ReLU inside the softmax; turning this
    /// off drops that clamp for comparison runs.
    pub classifier_relu: bool,
}

impl GearConfig {
    /// Desk-scale defaults: F=32 hashed features over 256 buckets, H=16,
    /// one reasoning layer, attention aggregation.
    pub fn desk_default() -> Self {
        GearConfig {
            encoder: EncoderConfig::hashed_bow(32, 256),
            hidden_dim: 16,
            num_layers: 1,
            aggregator: AggregatorKind::Attention,
            classifier_relu: true,
        }
    }

    pub fn ernet_config(&self) -> ErNetConfig {
        ErNetConfig {
            feature_dim: self.encoder.feature_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_labels: NUM_LABELS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.ernet_config().validate()
    }
}

/// Every learnable weight of the verifier: the toy encoder projections (when
/// the hashed encoder is in use), per-layer reasoning MLPs, the aggregator
/// MLP and the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GearParams {
    pub encoder: Option<HashedBowParams>,
    pub ernet_layers: Vec<ErNetLayerParams>,
    pub aggregator: AggregatorParams,
}

impl GearParams {
    /// Seeded initialization; identical (config, seed) give identical
    /// parameters.
    pub fn init(config: &GearConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.encoder.feature_dim;
        let encoder = match config.encoder.kind {
            EncoderKind::HashedBow => Some(HashedBowParams::init(&config.encoder, &mut rng)),
            EncoderKind::Precomputed => None,
        };
        let ernet_layers = (0..config.num_layers)
            .map(|_| ErNetLayerParams::init(f, config.hidden_dim, &mut rng))
            .collect();
        let aggregator =
            AggregatorParams::init(config.aggregator, f, config.hidden_dim, NUM_LABELS, &mut rng);
        Ok(GearParams {
            encoder,
            ernet_layers,
            aggregator,
        })
    }

    /// Stable (name, matrix) listing used by the optimizer, checkpoints and
    /// gradient checks. `visit_mut` yields the same entries in the same
    /// order.
    pub fn visit(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        if let Some(enc) = &self.encoder {
            out.push(("encoder.w_pair".to_string(), &enc.w_pair));
            out.push(("encoder.w_claim".to_string(), &enc.w_claim));
        }
        for (t, layer) in self.ernet_layers.iter().enumerate() {
            out.push((format!("ernet.{t}.w0"), &layer.w0));
            out.push((format!("ernet.{t}.w1"), &layer.w1));
        }
        if let Some(attention) = &self.aggregator.attention {
            out.push(("aggregator.w0".to_string(), &attention.w0));
            out.push(("aggregator.w1".to_string(), &attention.w1));
        }
        out.push(("classifier.w".to_string(), &self.aggregator.classifier_w));
        out.push(("classifier.b".to_string(), &self.aggregator.classifier_b));
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = Vec::new();
        if let Some(enc) = &mut self.encoder {
            out.push(("encoder.w_pair".to_string(), &mut enc.w_pair));
            out.push(("encoder.w_claim".to_string(), &mut enc.w_claim));
        }
        for (t, layer) in self.ernet_layers.iter_mut().enumerate() {
            out.push((format!("ernet.{t}.w0"), &mut layer.w0));
            out.push((format!("ernet.{t}.w1"), &mut layer.w1));
        }
        if let Some(attention) = &mut self.aggregator.attention {
            out.push(("aggregator.w0".to_string(), &mut attention.w0));
            out.push(("aggregator.w1".to_string(), &mut attention.w1));
        }
        out.push(("classifier.w".to_string(), &mut self.aggregator.classifier_w));
        out.push(("classifier.b".to_string(), &mut self.aggregator.classifier_b));
        out
    }
}

/// Model weights lifted onto one graph, ready for forward passes.
pub struct LiftedModel<'a> {
    config: &'a GearConfig,
    encoder: LiftedEncoder<'a>,
    layers: Vec<LiftedErNetLayer>,
    aggregator: LiftedAggregator,
    /// (name, node) per parameter, aligned with [`GearParams::visit`].
    pub param_nodes: Vec<(String, Node)>,
}

/// Lifts parameters onto `g`. With `trainable` the weights become gradient
/// leaves; otherwise they are constants (cheaper backward, same values).
pub fn lift<'a>(
    g: &mut Graph,
    config: &'a GearConfig,
    params: &GearParams,
    features: Option<&'a PrecomputedFeatures>,
    trainable: bool,
) -> Result<LiftedModel<'a>> {
    if config.encoder.kind == EncoderKind::HashedBow && params.encoder.is_none() {
        return Err(GearError::Config(
            "hashed_bow encoder selected but no encoder weights".into(),
        ));
    }
    if params.ernet_layers.len() != config.num_layers {
        return Err(GearError::Config(format!(
            "config expects {} reasoning layers, parameters hold {}",
            config.num_layers,
            params.ernet_layers.len()
        )));
    }
    if params.aggregator.kind != config.aggregator {
        return Err(GearError::Config(format!(
            "config aggregator {} does not match parameter aggregator {}",
            config.aggregator, params.aggregator.kind
        )));
    }
    let nodes: Vec<Node> = params
        .visit()
        .into_iter()
        .map(|(_, value)| {
            if trainable {
                g.param(value.clone())
            } else {
                g.constant(value.clone())
            }
        })
        .collect();
    model_from_nodes(config, features, &nodes)
}

/// Wires already-created graph nodes into a model, in [`GearParams::visit`]
/// order. This is what gradient checking uses: the loss then flows through
/// exactly the nodes the caller owns.
pub fn model_from_nodes<'a>(
    config: &'a GearConfig,
    features: Option<&'a PrecomputedFeatures>,
    nodes: &[Node],
) -> Result<LiftedModel<'a>> {
    config.validate()?;
    let uses_hashed = config.encoder.kind == EncoderKind::HashedBow;
    let uses_attention = config.aggregator == AggregatorKind::Attention;
    let expected = if uses_hashed { 2 } else { 0 }
        + 2 * config.num_layers
        + if uses_attention { 2 } else { 0 }
        + 2;
    if nodes.len() != expected {
        return Err(GearError::Config(format!(
            "expected {expected} parameter nodes, got {}",
            nodes.len()
        )));
    }

    let mut param_nodes = Vec::with_capacity(expected);
    let mut cursor = 0;
    let mut take = |name: String| -> Node {
        let node = nodes[cursor];
        param_nodes.push((name, node));
        cursor += 1;
        node
    };

    let encoder = if uses_hashed {
        let w_pair = take("encoder.w_pair".to_string());
        let w_claim = take("encoder.w_claim".to_string());
        LiftedEncoder::HashedBow {
            config: &config.encoder,
            w_pair,
            w_claim,
        }
    } else {
        let features = features.ok_or_else(|| {
            GearError::Config("precomputed encoder selected but no feature file loaded".into())
        })?;
        if features.feature_dim() != config.encoder.feature_dim {
            return Err(GearError::DimensionMismatch {
                op: "precomputed features",
                left_rows: features.feature_dim(),
                left_cols: 1,
                right_rows: config.encoder.feature_dim,
                right_cols: 1,
            });
        }
        LiftedEncoder::Precomputed { features }
    };

    let layers = (0..config.num_layers)
        .map(|t| LiftedErNetLayer {
            w0: take(format!("ernet.{t}.w0")),
            w1: take(format!("ernet.{t}.w1")),
        })
        .collect();

    let attention = uses_attention.then(|| {
        (
            take("aggregator.w0".to_string()),
            take("aggregator.w1".to_string()),
        )
    });
    let aggregator = LiftedAggregator {
        kind: config.aggregator,
        attention,
        classifier_w: take("classifier.w".to_string()),
        classifier_b: take("classifier.b".to_string()),
    };

    Ok(LiftedModel {
        config,
        encoder,
        layers,
        aggregator,
        param_nodes,
    })
}

/// Result of one forward pass: the probability node (for loss construction)
/// plus the extracted values and attention records.
pub struct ForwardPass {
    pub probs: Node,
    pub output: VerifierOutput,
}

impl LiftedModel<'_> {
    pub fn forward(
        &self,
        g: &mut Graph,
        example_id: u64,
        claim: &str,
        evidence: &[String],
    ) -> Result<ForwardPass> {
        let encoding = self.encoder.encode(g, example_id, claim, evidence)?;
        let initial = HiddenStates::initial(encoding.evidence_vecs);
        let ernet_config = self.config.ernet_config();
        let (final_states, layer_attention) = run_ernet(g, &ernet_config, &self.layers, initial)?;
        let (aggregated, alpha) = aggregate(g, &self.aggregator, encoding.claim_vec, &final_states)?;
        let probs = classify(g, &self.aggregator, aggregated, self.config.classifier_relu)?;
        let aggregator_attention = alpha.map(|node| g.value(node).data().to_vec());
        let output = VerifierOutput::from_probs(
            g.value(probs).data().to_vec(),
            aggregator_attention,
            layer_attention,
        );
        Ok(ForwardPass { probs, output })
    }
}

/// Frozen single-example prediction on a fresh graph.
pub fn predict(
    config: &GearConfig,
    params: &GearParams,
    features: Option<&PrecomputedFeatures>,
    example_id: u64,
    claim: &str,
    evidence: &[String],
) -> Result<VerifierOutput> {
    let mut g = Graph::new();
    let model = lift(&mut g, config, params, features, false)?;
    Ok(model.forward(&mut g, example_id, claim, evidence)?.output)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(num_layers: usize, aggregator: AggregatorKind) -> GearConfig {
        GearConfig {
            encoder: EncoderConfig::hashed_bow(6, 16),
            hidden_dim: 4,
            num_layers,
            aggregator,
            classifier_relu: true,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let config = small_config(2, AggregatorKind::Attention);
        let a = GearParams::init(&config, 7).unwrap();
        let b = GearParams::init(&config, 7).unwrap();
        let c = GearParams::init(&config, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn visit_order_matches_lift_order() {
        let config = small_config(2, AggregatorKind::Attention);
        let params = GearParams::init(&config, 1).unwrap();
        let mut g = Graph::new();
        let model = lift(&mut g, &config, &params, None, true).unwrap();
        let visit_names: Vec<String> = params.visit().into_iter().map(|(n, _)| n).collect();
        let lift_names: Vec<String> = model.param_nodes.iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(visit_names, lift_names);
        assert_eq!(visit_names.len(), 2 + 4 + 2 + 2);
    }

    #[test]
    fn forward_produces_distribution_and_attention_records() {
        let config = small_config(2, AggregatorKind::Attention);
        let params = GearParams::init(&config, 3).unwrap();
        let evidence = vec![
            "The Stone Rebels performs jazz music.".to_string(),
            "Alex Stone is a member of The Stone Rebels.".to_string(),
            "Alex Stone lives in Dorwick.".to_string(),
        ];
        let out = predict(
            &config,
            &params,
            None,
            1,
            "Alex Stone is a member of a band that performs jazz music.",
            &evidence,
        )
        .unwrap();
        let sum: f64 = out.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(out.layer_attention.len(), 2);
        for alpha in &out.layer_attention {
            assert_eq!(alpha.shape(), (3, 3));
            for i in 0..3 {
                let row: f64 = (0..3).map(|j| alpha.get(i, j)).sum();
                assert!((row - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(out.aggregator_attention.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn max_and_mean_have_no_aggregator_attention() {
        for kind in [AggregatorKind::Max, AggregatorKind::Mean] {
            let config = small_config(0, kind);
            let params = GearParams::init(&config, 3).unwrap();
            let out = predict(
                &config,
                &params,
                None,
                1,
                "a claim",
                &["evidence one".to_string(), "evidence two".to_string()],
            )
            .unwrap();
            assert!(out.aggregator_attention.is_none());
            assert!(out.layer_attention.is_empty());
        }
    }

    #[test]
    fn missing_encoder_weights_is_config_error() {
        let config = small_config(0, AggregatorKind::Mean);
        let mut params = GearParams::init(&config, 1).unwrap();
        params.encoder = None;
        let mut g = Graph::new();
        assert!(matches!(
            lift(&mut g, &config, &params, None, true),
            Err(GearError::Config(_))
        ));
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        use crate::tensorcore::check_gradients;
        let config = small_config(1, AggregatorKind::Attention);
        let reference = GearParams::init(&config, 5).unwrap();
        let named: Vec<(String, Matrix)> = reference
            .visit()
            .into_iter()
            .map(|(n, m)| (n, m.clone()))
            .collect();
        let evidence = vec![
            "alpha beta gamma".to_string(),
            "delta alpha".to_string(),
        ];
        let claim = "alpha epsilon";
        let report = check_gradients(
            |g, ps| {
                let model = model_from_nodes(&config, None, ps)?;
                let fp = model.forward(g, 1, claim, &evidence)?;
                let picked = g.entry(fp.probs, 0)?;
                g.neg_ln(picked)
            },
            &named,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }
}
