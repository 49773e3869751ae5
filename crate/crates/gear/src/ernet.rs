//! Evidence reasoning network: attention-weighted message passing over a
//! fully-connected evidence graph with self-loops.
//!
//! Each layer scores every ordered node pair with a bias-free two-layer MLP,
//! normalizes the scores per node with a softmax, and replaces each hidden
//! state with the attention-weighted mix of the previous states. There is no
//! feature transform inside the mixing step, so every output state stays in
//! the convex hull of its inputs.

use rand::Rng;

use crate::encoder::xavier_uniform;
use crate::error::{GearError, Result};
use crate::tensorcore::{Graph, Matrix, Node};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ErNetConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// Number of stacked layers T, 0 through 3. T = 0 passes states through
    /// untouched.
    pub num_layers: usize,
    pub num_labels: usize,
}

impl ErNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(GearError::Config(format!(
                "ernet dims must be >= 1 (F {}, H {})",
                self.feature_dim, self.hidden_dim
            )));
        }
        if self.num_layers > 3 {
            return Err(GearError::Config(format!(
                "num_layers must be in 0..=3, got {}",
                self.num_layers
            )));
        }
        if self.num_labels != 3 {
            return Err(GearError::Config(format!(
                "num_labels must be 3, got {}",
                self.num_labels
            )));
        }
        Ok(())
    }
}

/// Attention MLP weights for one layer. Layers do not share weights.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErNetLayerParams {
    /// H x 2F.
    pub w0: Matrix,
    /// 1 x H.
    pub w1: Matrix,
}

impl ErNetLayerParams {
    pub fn init(feature_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        ErNetLayerParams {
            w0: xavier_uniform(hidden_dim, 2 * feature_dim, rng),
            w1: xavier_uniform(1, hidden_dim, rng),
        }
    }
}

/// One layer's weights lifted onto a graph.
#[derive(Debug, Clone, Copy)]
pub struct LiftedErNetLayer {
    pub w0: Node,
    pub w1: Node,
}

/// Evidence node states after `layer` rounds of propagation; each node is an
/// F-vector on the graph. Layer 0 holds the raw evidence encodings.
#[derive(Debug, Clone)]
pub struct HiddenStates {
    pub nodes: Vec<Node>,
    pub layer: usize,
}

impl HiddenStates {
    pub fn initial(nodes: Vec<Node>) -> Self {
        HiddenStates { nodes, layer: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Unnormalized attention coefficient `p_ij = W1 ReLU(W0 [h_i ; h_j])`.
/// No bias terms.
pub fn attention_logit(
    g: &mut Graph,
    layer: LiftedErNetLayer,
    h_i: Node,
    h_j: Node,
) -> Result<Node> {
    let pair = g.concat_rows(h_i, h_j)?;
    let hidden = g.matmul(layer.w0, pair)?;
    let activated = g.relu(hidden)?;
    g.matmul(layer.w1, activated)
}

/// One round of message passing. The neighbor set of every node is all N
/// nodes including itself. Returns the new states and the row-stochastic
/// N x N attention matrix (row i holds the weights node i assigned).
pub fn propagate_layer(
    g: &mut Graph,
    layer: LiftedErNetLayer,
    states: &HiddenStates,
) -> Result<(HiddenStates, Matrix)> {
    let n = states.len();
    if n == 0 {
        return Err(GearError::EmptyAggregation {
            op: "propagate_layer",
        });
    }
    let mut attention = Matrix::zeros(n, n);
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let logits: Vec<Node> = states
            .nodes
            .iter()
            .map(|&h_j| attention_logit(g, layer, states.nodes[i], h_j))
            .collect::<Result<_>>()?;
        let stacked = g.stack_rows(&logits)?;
        let alpha = g.softmax_vec(stacked)?;
        for j in 0..n {
            attention.set(i, j, g.value(alpha).get(j, 0));
        }
        let mut terms = Vec::with_capacity(n);
        for (j, &h_j) in states.nodes.iter().enumerate() {
            let weight = g.entry(alpha, j)?;
            terms.push((weight, h_j));
        }
        next.push(g.scale_add(&terms)?);
    }
    Ok((
        HiddenStates {
            nodes: next,
            layer: states.layer + 1,
        },
        attention,
    ))
}

/// Runs T stacked layers. T = 0 returns the initial states unchanged and no
/// attention records.
pub fn run_ernet(
    g: &mut Graph,
    config: &ErNetConfig,
    layers: &[LiftedErNetLayer],
    initial: HiddenStates,
) -> Result<(HiddenStates, Vec<Matrix>)> {
    if layers.len() != config.num_layers {
        return Err(GearError::Config(format!(
            "expected {} layer parameter sets, got {}",
            config.num_layers,
            layers.len()
        )));
    }
    let mut states = initial;
    let mut attention = Vec::with_capacity(layers.len());
    for layer in layers {
        let (next, alpha) = propagate_layer(g, *layer, &states)?;
        states = next;
        attention.push(alpha);
    }
    Ok((states, attention))
}
