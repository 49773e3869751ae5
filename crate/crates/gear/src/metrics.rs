//! Label accuracy, evidence precision/recall/F1, and the FEVER and OFEVER
//! scores.
//!
//! FEVER score counts a claim iff the predicted label is right and, for
//! non-NEI claims, at least one complete gold evidence group was provided.
//! OFEVER is the same with the label assumed correct, which makes it the
//! upper bound the retrieval stage imposes. Evidence precision/recall are
//! micro-averaged over sentences of non-NEI examples; predicted evidence is
//! capped at five sentences before scoring, mirroring the selection cap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{ExampleId, Label, LabeledExample, Prediction};
use crate::error::{GearError, Result};
use crate::retrieval::EVIDENCE_CAP;

/// Evidence keys for one example, in retrieval order.
pub type EvidenceKeys = Vec<(String, u64)>;

/// Looks up a prediction for every example, reporting all missing ids at
/// once.
fn index_predictions<'p>(
    examples: &[LabeledExample],
    predictions: &'p [Prediction],
) -> Result<BTreeMap<ExampleId, &'p Prediction>> {
    let by_id: BTreeMap<ExampleId, &Prediction> =
        predictions.iter().map(|p| (p.id, p)).collect();
    let missing: Vec<String> = examples
        .iter()
        .filter(|ex| !by_id.contains_key(&ex.id))
        .map(|ex| ex.id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(GearError::MissingKey(format!(
            "no prediction for example ids [{}]",
            missing.join(", ")
        )));
    }
    Ok(by_id)
}

fn capped_keys(keys: &[(String, u64)]) -> BTreeSet<(String, u64)> {
    keys.iter().take(EVIDENCE_CAP).cloned().collect()
}

/// Fraction of claims whose predicted label matches gold.
pub fn label_accuracy(examples: &[LabeledExample], predictions: &[Prediction]) -> Result<f64> {
    let by_id = index_predictions(examples, predictions)?;
    if examples.is_empty() {
        return Ok(0.0);
    }
    let correct = examples
        .iter()
        .filter(|ex| by_id[&ex.id].predicted_label == ex.label)
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

/// Label accuracy conditioned on providing at least one complete gold
/// evidence group; NEI claims are exempt from the evidence requirement.
pub fn fever_score(examples: &[LabeledExample], predictions: &[Prediction]) -> Result<f64> {
    let by_id = index_predictions(examples, predictions)?;
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut counted = 0usize;
    for ex in examples {
        let pred = by_id[&ex.id];
        if pred.predicted_label != ex.label {
            continue;
        }
        if ex.label == Label::NotEnoughInfo
            || ex.has_complete_group(&capped_keys(&pred.predicted_evidence))
        {
            counted += 1;
        }
    }
    Ok(counted as f64 / examples.len() as f64)
}

/// FEVER score with the label assumed always correct: counts a claim iff it
/// is NEI or some gold group is fully inside its retrieved set.
pub fn ofever_score(
    examples: &[LabeledExample],
    retrieved_sets: &BTreeMap<ExampleId, EvidenceKeys>,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut counted = 0usize;
    for ex in examples {
        if ex.label == Label::NotEnoughInfo {
            counted += 1;
            continue;
        }
        let keys = retrieved_sets
            .get(&ex.id)
            .ok_or_else(|| GearError::MissingKey(format!("no retrieved set for example {}", ex.id)))?;
        if ex.has_complete_group(&capped_keys(keys)) {
            counted += 1;
        }
    }
    Ok(counted as f64 / examples.len() as f64)
}

/// Micro-averaged evidence precision, recall and F1 over non-NEI examples.
/// A retrieved sentence is correct iff it appears in any gold group; recall
/// counts gold sentences (union over groups) that were found.
pub fn evidence_prf(
    examples: &[LabeledExample],
    retrieved_sets: &BTreeMap<ExampleId, EvidenceKeys>,
) -> Result<(f64, f64, f64)> {
    let mut retrieved_total = 0usize;
    let mut retrieved_correct = 0usize;
    let mut gold_total = 0usize;
    let mut gold_found = 0usize;
    for ex in examples {
        if ex.label == Label::NotEnoughInfo {
            continue;
        }
        let keys = retrieved_sets
            .get(&ex.id)
            .ok_or_else(|| GearError::MissingKey(format!("no retrieved set for example {}", ex.id)))?;
        let keys = capped_keys(keys);
        let gold = ex.gold_union();
        retrieved_total += keys.len();
        retrieved_correct += keys.iter().filter(|k| gold.contains(*k)).count();
        gold_total += gold.len();
        gold_found += gold.iter().filter(|g| keys.contains(*g)).count();
    }
    let precision = if retrieved_total == 0 {
        0.0
    } else {
        retrieved_correct as f64 / retrieved_total as f64
    };
    let recall = if gold_total == 0 {
        0.0
    } else {
        gold_found as f64 / gold_total as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Everything the pipeline reports for one prediction set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub num_examples: usize,
    pub label_accuracy: f64,
    pub fever_score: f64,
    pub ofever_score: f64,
    pub evidence_precision: f64,
    pub evidence_recall: f64,
    pub evidence_f1: f64,
    /// `confusion[gold][predicted]` in SUPPORTED, REFUTED, NEI order.
    pub confusion: [[usize; 3]; 3],
}

/// Scores a prediction set against gold examples. The prediction evidence
/// doubles as the retrieved set for OFEVER and precision/recall.
pub fn evaluate(examples: &[LabeledExample], predictions: &[Prediction]) -> Result<EvaluationReport> {
    let by_id = index_predictions(examples, predictions)?;
    let retrieved: BTreeMap<ExampleId, EvidenceKeys> = examples
        .iter()
        .map(|ex| (ex.id, by_id[&ex.id].predicted_evidence.clone()))
        .collect();
    let mut confusion = [[0usize; 3]; 3];
    for ex in examples {
        confusion[ex.label.index()][by_id[&ex.id].predicted_label.index()] += 1;
    }
    let (evidence_precision, evidence_recall, evidence_f1) = evidence_prf(examples, &retrieved)?;
    Ok(EvaluationReport {
        num_examples: examples.len(),
        label_accuracy: label_accuracy(examples, predictions)?,
        fever_score: fever_score(examples, predictions)?,
        ofever_score: ofever_score(examples, &retrieved)?,
        evidence_precision,
        evidence_recall,
        evidence_f1,
        confusion,
    })
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>8}", "metric", "value")?;
        writeln!(f, "{:<20} {:>8}", "examples", self.num_examples)?;
        writeln!(f, "{:<20} {:>8.4}", "label_accuracy", self.label_accuracy)?;
        writeln!(f, "{:<20} {:>8.4}", "fever_score", self.fever_score)?;
        writeln!(f, "{:<20} {:>8.4}", "ofever_score", self.ofever_score)?;
        writeln!(f, "{:<20} {:>8.4}", "evidence_precision", self.evidence_precision)?;
        writeln!(f, "{:<20} {:>8.4}", "evidence_recall", self.evidence_recall)?;
        writeln!(f, "{:<20} {:>8.4}", "evidence_f1", self.evidence_f1)?;
        writeln!(f, "confusion (rows gold, cols predicted)")?;
        writeln!(f, "{:<10} {:>6} {:>6} {:>6}", "", "SUP", "REF", "NEI")?;
        for label in Label::ALL {
            let row = self.confusion[label.index()];
            writeln!(
                f,
                "{:<10} {:>6} {:>6} {:>6}",
                label.to_string(),
                row[0],
                row[1],
                row[2]
            )?;
        }
        Ok(())
    }
}
