//! Offline document retrieval, trainable sentence relevance scoring, and the
//! threshold filter that produces the final evidence set of at most five
//! sentences.
//!
//! Document retrieval is title matching over a local corpus: candidates must
//! share at least one token with the claim and are ranked by overlap count,
//! then title length, then name. Sentence relevance is a logistic score over
//! four overlap features, trained with the pairwise hinge loss
//! `sum max(0, 1 + s_n - s_p)` on sampled positive/negative pairs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, DatasetSplit, Document};
use crate::text::tokens;

/// One candidate evidence sentence with its provenance and relevance score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSentence {
    pub doc_name: String,
    pub line_num: u64,
    pub text: String,
    pub score: f64,
}

/// Largest number of sentences kept by [`select_evidence`].
pub const EVIDENCE_CAP: usize = 5;

/// Default number of documents returned per claim.
pub const DEFAULT_DOC_K: usize = 7;

/// Candidate documents whose titles share at least one token with the claim,
/// ranked by shared-token count (descending), then title length (ascending,
/// shorter titles are tighter matches), then document name; truncated to `k`.
pub fn retrieve_documents<'c>(claim: &str, corpus: &'c Corpus, k: usize) -> Vec<&'c Document> {
    let claim_tokens: std::collections::BTreeSet<String> = tokens(claim).into_iter().collect();
    let mut ranked: Vec<(usize, &'c Document)> = corpus
        .documents()
        .filter_map(|doc| {
            let title_tokens: std::collections::BTreeSet<String> =
                tokens(&doc.doc_name).into_iter().collect();
            let overlap = title_tokens.intersection(&claim_tokens).count();
            (overlap > 0).then_some((overlap, doc))
        })
        .collect();
    ranked.sort_by(|(oa, da), (ob, db)| {
        ob.cmp(oa)
            .then(da.doc_name.len().cmp(&db.doc_name.len()))
            .then(da.doc_name.cmp(&db.doc_name))
    });
    ranked.into_iter().take(k).map(|(_, d)| d).collect()
}

/// Weights of the linear relevance scorer, one per feature in
/// [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorParams {
    pub weights: [f64; 4],
}

/// Fixed feature order of [`sentence_features`].
pub const FEATURE_NAMES: [&str; 4] = [
    "unigram_overlap",
    "bigram_overlap",
    "title_in_claim",
    "length_ratio",
];

impl Default for SelectorParams {
    fn default() -> Self {
        SelectorParams { weights: [0.0; 4] }
    }
}

fn bigrams(toks: &[String]) -> std::collections::BTreeSet<(String, String)> {
    toks.windows(2)
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect()
}

/// Overlap features between a claim and one candidate sentence:
/// fraction of distinct claim unigrams found in the sentence, fraction of
/// claim bigrams found, whether every token of the source document title
/// appears in the claim, and the token-count ratio min/max.
pub fn sentence_features(claim: &str, sentence_text: &str, doc_name: &str) -> [f64; 4] {
    let claim_toks = tokens(claim);
    let sent_toks = tokens(sentence_text);
    let claim_set: std::collections::BTreeSet<&String> = claim_toks.iter().collect();
    let sent_set: std::collections::BTreeSet<&String> = sent_toks.iter().collect();

    let unigram = if claim_set.is_empty() {
        0.0
    } else {
        claim_set.intersection(&sent_set).count() as f64 / claim_set.len() as f64
    };

    let claim_bi = bigrams(&claim_toks);
    let sent_bi = bigrams(&sent_toks);
    let bigram = if claim_bi.is_empty() {
        0.0
    } else {
        claim_bi.intersection(&sent_bi).count() as f64 / claim_bi.len() as f64
    };

    let title_toks = tokens(doc_name);
    let title_in_claim = if !title_toks.is_empty()
        && title_toks.iter().all(|t| claim_set.contains(t))
    {
        1.0
    } else {
        0.0
    };

    let (a, b) = (claim_toks.len() as f64, sent_toks.len() as f64);
    let length_ratio = if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a.min(b) / a.max(b)
    };

    [unigram, bigram, title_in_claim, length_ratio]
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SelectorParams {
    /// Relevance score in (0, 1): logistic of the weighted feature sum, so
    /// published threshold magnitudes stay meaningful.
    pub fn score(&self, claim: &str, sentence_text: &str, doc_name: &str) -> f64 {
        let f = sentence_features(claim, sentence_text, doc_name);
        let dot: f64 = self.weights.iter().zip(f.iter()).map(|(w, x)| w * x).sum();
        logistic(dot)
    }
}

/// Relevance score of one candidate under the given selector weights.
pub fn score_sentence(params: &SelectorParams, claim: &str, sentence: &EvidenceSentence) -> f64 {
    params.score(claim, &sentence.text, &sentence.doc_name)
}

/// One training pair for the selector: a claim with one relevant and one
/// irrelevant sentence.
#[derive(Debug, Clone)]
pub struct SelectorPair {
    pub claim: String,
    pub positive_text: String,
    pub positive_doc: String,
    pub negative_text: String,
    pub negative_doc: String,
}

/// Pairwise hinge loss for one (positive, negative) score pair.
pub fn hinge_pair_loss(s_p: f64, s_n: f64) -> f64 {
    (1.0 + s_n - s_p).max(0.0)
}

/// Total hinge loss of the selector over a pair set.
pub fn selector_loss(params: &SelectorParams, pairs: &[SelectorPair]) -> f64 {
    pairs
        .iter()
        .map(|p| {
            let sp = params.score(&p.claim, &p.positive_text, &p.positive_doc);
            let sn = params.score(&p.claim, &p.negative_text, &p.negative_doc);
            hinge_pair_loss(sp, sn)
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct SelectorTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Optional L2 pull on the weights. The hinge margin of 1 is
    /// unreachable on logistic scores, so without decay the weights grow
    /// until every score saturates and wrongly-ordered pairs freeze with
    /// vanishing gradient. A small decay keeps scores in the responsive
    /// range. Zero reproduces plain hinge descent.
    pub weight_decay: f64,
}

impl Default for SelectorTrainConfig {
    fn default() -> Self {
        SelectorTrainConfig {
            learning_rate: 0.5,
            epochs: 500,
            weight_decay: 0.0,
        }
    }
}

impl SelectorTrainConfig {
    /// Configuration used by the pipeline: enough decay to keep scores
    /// spread over (0, 1).
    pub fn pipeline_default() -> Self {
        SelectorTrainConfig {
            learning_rate: 0.5,
            epochs: 400,
            weight_decay: 0.02,
        }
    }
}

/// Full-batch gradient descent on the hinge loss. The gradient of
/// `max(0, 1 + s_n - s_p)` is `sigma'(x_n) f_n - sigma'(x_p) f_p` on active
/// pairs and zero once the margin is met.
pub fn train_selector(
    params: SelectorParams,
    pairs: &[SelectorPair],
    config: &SelectorTrainConfig,
) -> SelectorParams {
    let mut w = params.weights;
    let feats: Vec<([f64; 4], [f64; 4])> = pairs
        .iter()
        .map(|p| {
            (
                sentence_features(&p.claim, &p.positive_text, &p.positive_doc),
                sentence_features(&p.claim, &p.negative_text, &p.negative_doc),
            )
        })
        .collect();
    let scale = 1.0 / pairs.len().max(1) as f64;
    for _ in 0..config.epochs {
        let mut grad = [0.0_f64; 4];
        for (fp, fn_) in &feats {
            let xp: f64 = w.iter().zip(fp.iter()).map(|(a, b)| a * b).sum();
            let xn: f64 = w.iter().zip(fn_.iter()).map(|(a, b)| a * b).sum();
            let sp = logistic(xp);
            let sn = logistic(xn);
            if 1.0 + sn - sp > 0.0 {
                let dp = sp * (1.0 - sp);
                let dn = sn * (1.0 - sn);
                for k in 0..4 {
                    grad[k] += dn * fn_[k] - dp * fp[k];
                }
            }
        }
        // Gradient averaged over pairs so step sizes do not scale with the
        // dataset; the reported loss stays the plain sum.
        for k in 0..4 {
            w[k] -= config.learning_rate * (grad[k] * scale + config.weight_decay * w[k]);
        }
    }
    SelectorParams { weights: w }
}

/// Seed-replica ensemble; the score of a sentence is the mean of the member
/// scores. One member reproduces a single model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectorEnsemble {
    pub members: Vec<SelectorParams>,
}

impl SelectorEnsemble {
    pub fn single(params: SelectorParams) -> Self {
        SelectorEnsemble {
            members: vec![params],
        }
    }

    pub fn score(&self, claim: &str, sentence_text: &str, doc_name: &str) -> f64 {
        let total: f64 = self
            .members
            .iter()
            .map(|m| m.score(claim, sentence_text, doc_name))
            .sum();
        total / self.members.len() as f64
    }
}

/// Samples selector training pairs from a split: each resolvable gold
/// sentence is a positive, and `negatives_per_positive` negatives are drawn
/// uniformly from the non-evidence sentences of the claim's retrieved
/// documents.
pub fn sample_training_pairs(
    split: &DatasetSplit,
    corpus: &Corpus,
    seed: u64,
    negatives_per_positive: usize,
) -> Vec<SelectorPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for example in &split.examples {
        if example.gold_groups.is_empty() {
            continue;
        }
        let gold: std::collections::BTreeSet<(String, u64)> = example
            .gold_groups
            .iter()
            .flatten()
            .map(|g| (g.doc_name.clone(), g.line_num))
            .collect();
        let docs = retrieve_documents(&example.claim, corpus, DEFAULT_DOC_K);
        let negatives: Vec<(&str, u64, &str)> = docs
            .iter()
            .flat_map(|d| {
                d.lines
                    .iter()
                    .filter(|(num, text)| {
                        !text.is_empty() && !gold.contains(&(d.doc_name.clone(), *num))
                    })
                    .map(move |(num, text)| (d.doc_name.as_str(), *num, text.as_str()))
            })
            .collect();
        if negatives.is_empty() {
            continue;
        }
        for sentence in example.gold_groups.iter().flatten() {
            let Some(text) = &sentence.text else { continue };
            for _ in 0..negatives_per_positive {
                let (ndoc, _, ntext) = negatives[rng.random_range(0..negatives.len())];
                pairs.push(SelectorPair {
                    claim: example.claim.clone(),
                    positive_text: text.clone(),
                    positive_doc: sentence.doc_name.clone(),
                    negative_text: ntext.to_string(),
                    negative_doc: ndoc.to_string(),
                });
            }
        }
    }
    pairs
}

/// Trains an ensemble with one member per seed. Each member gets its own
/// negative sample and a tiny seed-dependent weight jitter so replicas
/// genuinely differ.
pub fn train_selector_ensemble(
    split: &DatasetSplit,
    corpus: &Corpus,
    seeds: &[u64],
    negatives_per_positive: usize,
    config: &SelectorTrainConfig,
) -> SelectorEnsemble {
    let members = seeds
        .iter()
        .map(|&seed| {
            let pairs = sample_training_pairs(split, corpus, seed, negatives_per_positive);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e1ec7);
            let mut init = SelectorParams::default();
            for w in &mut init.weights {
                *w = rng.random_range(-0.01..0.01);
            }
            train_selector(init, &pairs, config)
        })
        .collect();
    SelectorEnsemble { members }
}

/// Keeps the top five sentences by score (ties broken by document name then
/// line number), then drops those scoring below `tau`. If nothing survives
/// the threshold the single best sentence is retained, so downstream modules
/// always see at least one sentence. Output is sorted by score descending.
pub fn select_evidence(mut scored: Vec<EvidenceSentence>, tau: f64) -> Vec<EvidenceSentence> {
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.doc_name.cmp(&b.doc_name))
            .then_with(|| a.line_num.cmp(&b.line_num))
    });
    scored.truncate(EVIDENCE_CAP);
    let fallback = scored.first().cloned();
    scored.retain(|s| s.score >= tau);
    if scored.is_empty() {
        return fallback.into_iter().collect();
    }
    scored
}

/// Scores all sentences of the retrieved documents for a claim and applies
/// [`select_evidence`].
pub fn retrieve_and_select(
    claim: &str,
    corpus: &Corpus,
    selector: &SelectorEnsemble,
    tau: f64,
) -> Vec<EvidenceSentence> {
    select_evidence(score_candidates(claim, corpus, selector), tau)
}

/// All candidate sentences from the retrieved documents, scored.
pub fn score_candidates(
    claim: &str,
    corpus: &Corpus,
    selector: &SelectorEnsemble,
) -> Vec<EvidenceSentence> {
    let docs = retrieve_documents(claim, corpus, DEFAULT_DOC_K);
    let mut out = Vec::new();
    for doc in docs {
        for (line_num, text) in &doc.lines {
            if text.is_empty() {
                continue;
            }
            out.push(EvidenceSentence {
                doc_name: doc.doc_name.clone(),
                line_num: *line_num,
                text: text.clone(),
                score: selector.score(claim, text, &doc.doc_name),
            });
        }
    }
    out
}

/// Shuffles a slice deterministically; used where sampling order matters.
pub fn deterministic_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
}
