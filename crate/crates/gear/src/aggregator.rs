//! Evidence aggregation and classification: collapses the N final hidden
//! states into one vector `o` and maps it to a distribution over the three
//! labels.
//!
//! Three aggregation strategies: claim-guided attention
//! (`p_j = W1' ReLU(W0' [c ; h_j])`, softmax, weighted sum), elementwise max,
//! and elementwise mean. The classifier is the one-layer
//! `softmax(ReLU(W o + b))` as printed; the inner ReLU clamps logits at zero,
//! which limits how far apart the label scores can move. `classifier_relu`
//! in the model config exists so that variant can be compared, but it
//! defaults to the printed form.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::encoder::xavier_uniform;
use crate::ernet::HiddenStates;
use crate::error::{GearError, Result};
use crate::tensorcore::{Graph, Matrix, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Attention,
    Max,
    Mean,
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregatorKind::Attention => write!(f, "attention"),
            AggregatorKind::Max => write!(f, "max"),
            AggregatorKind::Mean => write!(f, "mean"),
        }
    }
}

impl FromStr for AggregatorKind {
    type Err = GearError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "attention" => Ok(AggregatorKind::Attention),
            "max" => Ok(AggregatorKind::Max),
            "mean" => Ok(AggregatorKind::Mean),
            other => Err(GearError::Config(format!("unknown aggregator: {other:?}"))),
        }
    }
}

/// Attention MLP of the aggregator; absent for the max and mean kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMlpParams {
    /// H x 2F.
    pub w0: Matrix,
    /// 1 x H.
    pub w1: Matrix,
}

/// Aggregator weights plus the final classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorParams {
    pub kind: AggregatorKind,
    pub attention: Option<AttentionMlpParams>,
    /// C x F.
    pub classifier_w: Matrix,
    /// C x 1.
    pub classifier_b: Matrix,
}

impl AggregatorParams {
    pub fn init(
        kind: AggregatorKind,
        feature_dim: usize,
        hidden_dim: usize,
        num_labels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let attention = (kind == AggregatorKind::Attention).then(|| AttentionMlpParams {
            w0: xavier_uniform(hidden_dim, 2 * feature_dim, rng),
            w1: xavier_uniform(1, hidden_dim, rng),
        });
        AggregatorParams {
            kind,
            attention,
            classifier_w: xavier_uniform(num_labels, feature_dim, rng),
            classifier_b: Matrix::zeros(num_labels, 1),
        }
    }
}

/// Aggregator weights lifted onto a graph.
#[derive(Debug, Clone, Copy)]
pub struct LiftedAggregator {
    pub kind: AggregatorKind,
    pub attention: Option<(Node, Node)>,
    pub classifier_w: Node,
    pub classifier_b: Node,
}

/// Final verifier result for one example: the label distribution plus the
/// attention records needed for inspection and export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifierOutput {
    pub probs: Vec<f64>,
    pub predicted_label: Label,
    /// Aggregator attention over evidence (attention kind only).
    pub aggregator_attention: Option<Vec<f64>>,
    /// One row-stochastic N x N matrix per ERNet layer.
    pub layer_attention: Vec<Matrix>,
}

impl VerifierOutput {
    pub fn from_probs(
        probs: Vec<f64>,
        aggregator_attention: Option<Vec<f64>>,
        layer_attention: Vec<Matrix>,
    ) -> Self {
        let predicted_label = argmax_label(&probs);
        VerifierOutput {
            probs,
            predicted_label,
            aggregator_attention,
            layer_attention,
        }
    }
}

/// First strict maximum wins, so ties resolve in the fixed label order
/// SUPPORTED < REFUTED < NEI.
pub fn argmax_label(probs: &[f64]) -> Label {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    Label::from_index(best).expect("three probabilities")
}

/// Collapses the final hidden states into one F-vector. Returns the
/// attention weights for the attention kind, `None` otherwise.
pub fn aggregate(
    g: &mut Graph,
    agg: &LiftedAggregator,
    claim_vec: Node,
    states: &HiddenStates,
) -> Result<(Node, Option<Node>)> {
    if states.is_empty() {
        return Err(GearError::EmptyAggregation { op: "aggregate" });
    }
    match agg.kind {
        AggregatorKind::Attention => {
            let (w0, w1) = agg
                .attention
                .ok_or_else(|| GearError::Config("attention aggregator lacks weights".into()))?;
            let mut logits = Vec::with_capacity(states.len());
            for &h_j in &states.nodes {
                let pair = g.concat_rows(claim_vec, h_j)?;
                let hidden = g.matmul(w0, pair)?;
                let activated = g.relu(hidden)?;
                logits.push(g.matmul(w1, activated)?);
            }
            let stacked = g.stack_rows(&logits)?;
            let alpha = g.softmax_vec(stacked)?;
            let mut terms = Vec::with_capacity(states.len());
            for (k, &h_k) in states.nodes.iter().enumerate() {
                let weight = g.entry(alpha, k)?;
                terms.push((weight, h_k));
            }
            Ok((g.scale_add(&terms)?, Some(alpha)))
        }
        AggregatorKind::Max => Ok((g.elementwise_max(&states.nodes)?, None)),
        AggregatorKind::Mean => Ok((g.elementwise_mean(&states.nodes)?, None)),
    }
}

/// One-layer classifier over the aggregated state: logits `ReLU(W o + b)`
/// (the inner ReLU is skipped when `classifier_relu` is false), then
/// softmax. Returns the probability vector node.
pub fn classify(
    g: &mut Graph,
    agg: &LiftedAggregator,
    aggregated: Node,
    classifier_relu: bool,
) -> Result<Node> {
    let wo = g.matmul(agg.classifier_w, aggregated)?;
    let logits = g.add(wo, agg.classifier_b)?;
    let logits = if classifier_relu {
        g.relu(logits)?
    } else {
        logits
    };
    g.softmax_vec(logits)
}
