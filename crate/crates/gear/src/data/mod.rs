//! Dataset model and file formats: corpus documents, claim records with gold
//! evidence groups, prediction files, and the derived dev subsets.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{GearError, Result};
use crate::retrieval::{select_evidence, EvidenceSentence};

pub type ExampleId = u64;

/// Verification verdict. Canonical names are used internally; the FEVER
/// strings `SUPPORTS` / `REFUTES` / `NOT ENOUGH INFO` are used on disk and
/// accepted on ingest alongside the canonical names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Supported,
    Refuted,
    NotEnoughInfo,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Supported, Label::Refuted, Label::NotEnoughInfo];

    /// Classifier output index; also the fixed tie-break order.
    pub fn index(self) -> usize {
        match self {
            Label::Supported => 0,
            Label::Refuted => 1,
            Label::NotEnoughInfo => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn as_fever_str(self) -> &'static str {
        match self {
            Label::Supported => "SUPPORTS",
            Label::Refuted => "REFUTES",
            Label::NotEnoughInfo => "NOT ENOUGH INFO",
        }
    }

    pub fn parse(text: &str) -> Result<Label> {
        match text.trim() {
            "SUPPORTS" | "SUPPORTED" => Ok(Label::Supported),
            "REFUTES" | "REFUTED" => Ok(Label::Refuted),
            "NOT ENOUGH INFO" | "NEI" => Ok(Label::NotEnoughInfo),
            other => Err(GearError::Validation(format!("unknown label: {other:?}"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Supported => write!(f, "SUPPORTED"),
            Label::Refuted => write!(f, "REFUTED"),
            Label::NotEnoughInfo => write!(f, "NEI"),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_fever_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Label::parse(&raw).map_err(D::Error::custom)
    }
}

/// One gold evidence sentence. `text` is `None` when the (document, line)
/// pair could not be resolved against the corpus; the identifiers are kept
/// because scoring needs them even without text.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldSentence {
    pub doc_name: String,
    pub line_num: u64,
    pub text: Option<String>,
}

/// A set of sentences that together verify the claim. A claim may have
/// several alternative groups; any single complete group suffices.
pub type GoldGroup = Vec<GoldSentence>;

#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub id: ExampleId,
    pub claim: String,
    pub label: Label,
    pub gold_groups: Vec<GoldGroup>,
    pub retrieved: Vec<EvidenceSentence>,
}

impl LabeledExample {
    /// Union of all gold sentences as (document, line) keys.
    pub fn gold_union(&self) -> BTreeSet<(String, u64)> {
        self.gold_groups
            .iter()
            .flatten()
            .map(|g| (g.doc_name.clone(), g.line_num))
            .collect()
    }

    /// True when some gold group is fully contained in `retrieved_keys`.
    pub fn has_complete_group(&self, retrieved_keys: &BTreeSet<(String, u64)>) -> bool {
        self.gold_groups.iter().any(|group| {
            group
                .iter()
                .all(|g| retrieved_keys.contains(&(g.doc_name.clone(), g.line_num)))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitName::Train => write!(f, "train"),
            SplitName::Dev => write!(f, "dev"),
            SplitName::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub examples: Vec<LabeledExample>,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for ex in &self.examples {
            if !seen.insert(ex.id) {
                return Err(GearError::Validation(format!(
                    "duplicate example id {} in {} split",
                    ex.id, self.name
                )));
            }
            if ex.label == Label::NotEnoughInfo && !ex.gold_groups.is_empty() {
                return Err(GearError::Validation(format!(
                    "NEI example {} carries gold evidence",
                    ex.id
                )));
            }
            if ex.gold_groups.iter().any(|g| g.is_empty()) {
                return Err(GearError::Validation(format!(
                    "example {} has an empty gold group",
                    ex.id
                )));
            }
        }
        Ok(())
    }
}

/// One corpus document: a named article with numbered sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_name: String,
    pub lines: Vec<(u64, String)>,
}

impl Document {
    pub fn line(&self, num: u64) -> Option<&str> {
        self.lines
            .iter()
            .find(|(n, _)| *n == num)
            .map(|(_, t)| t.as_str())
    }
}

/// Immutable document store with deterministic iteration order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: BTreeMap<String, Document>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    pub fn insert(&mut self, doc: Document) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (num, _) in &doc.lines {
            if !seen.insert(*num) {
                return Err(GearError::Validation(format!(
                    "document {:?} repeats line number {num}",
                    doc.doc_name
                )));
            }
        }
        self.docs.insert(doc.doc_name.clone(), doc);
        Ok(())
    }

    pub fn get(&self, doc_name: &str) -> Option<&Document> {
        self.docs.get(doc_name)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn resolve(&self, doc_name: &str, line_num: u64) -> Option<&str> {
        self.get(doc_name).and_then(|d| d.line(line_num))
    }

    /// Loads the JSON-lines corpus format: one document per line as
    /// `{"id": name, "lines": "0\tfirst sentence\n1\tsecond ..."}`. Fields
    /// after the sentence text on a line (anchor annotations) are ignored.
    pub fn load_jsonl(path: &str) -> Result<Corpus> {
        let file = std::fs::File::open(path).map_err(|source| GearError::Io {
            path: path.to_string(),
            source,
        })?;
        let reader = std::io::BufReader::new(file);
        let mut corpus = Corpus::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line_no = line_no + 1;
            let line = line.map_err(|source| GearError::Io {
                path: path.to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| GearError::Parse {
                    path: path.to_string(),
                    line: line_no,
                    message: e.to_string(),
                })?;
            let doc = parse_corpus_record(&value).map_err(|message| GearError::Parse {
                path: path.to_string(),
                line: line_no,
                message,
            })?;
            corpus.insert(doc)?;
        }
        Ok(corpus)
    }

    pub fn save_jsonl(&self, path: &str) -> Result<()> {
        let mut out = String::new();
        for doc in self.docs.values() {
            let lines = doc
                .lines
                .iter()
                .map(|(n, t)| format!("{n}\t{t}"))
                .collect::<Vec<_>>()
                .join("\n");
            let record = serde_json::json!({ "id": doc.doc_name, "lines": lines });
            out.push_str(&record.to_string());
            out.push('\n');
        }
        write_file(path, out.as_bytes())
    }
}

fn parse_corpus_record(value: &serde_json::Value) -> std::result::Result<Document, String> {
    let doc_name = value
        .get("id")
        .and_then(|v| v.as_str())
        .ok_or("missing string field 'id'")?
        .to_string();
    let raw_lines = value
        .get("lines")
        .and_then(|v| v.as_str())
        .ok_or("missing string field 'lines'")?;
    let mut lines = Vec::new();
    for raw in raw_lines.split('\n') {
        if raw.is_empty() {
            continue;
        }
        let mut fields = raw.splitn(3, '\t');
        let num: u64 = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| format!("bad line number in {doc_name:?}: {e}"))?;
        let text = fields.next().unwrap_or_default().to_string();
        lines.push((num, text));
    }
    Ok(Document { doc_name, lines })
}

fn write_file(path: &str, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|source| GearError::Io {
        path: path.to_string(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| GearError::Io {
        path: path.to_string(),
        source,
    })
}

/// Parses FEVER claim records, one JSON object per line:
/// `{"id", "claim", "label", "evidence": [[[ann_id, ev_id, doc, line], ...], ...]}`.
/// Gold evidence text is resolved against `corpus` when one is given;
/// unresolvable pairs keep their identifiers with no text. NEI records keep
/// no gold groups regardless of their evidence field.
pub fn load_fever_jsonl(
    path: &str,
    corpus: Option<&Corpus>,
    name: SplitName,
) -> Result<DatasetSplit> {
    let file = std::fs::File::open(path).map_err(|source| GearError::Io {
        path: path.to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|source| GearError::Io {
            path: path.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| GearError::Parse {
                path: path.to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
        let example = parse_fever_record(&value, corpus).map_err(|message| GearError::Parse {
            path: path.to_string(),
            line: line_no,
            message,
        })?;
        examples.push(example);
    }
    let split = DatasetSplit { name, examples };
    split.validate()?;
    Ok(split)
}

fn parse_fever_record(
    value: &serde_json::Value,
    corpus: Option<&Corpus>,
) -> std::result::Result<LabeledExample, String> {
    let id = value
        .get("id")
        .and_then(|v| v.as_u64())
        .ok_or("missing integer field 'id'")?;
    let claim = value
        .get("claim")
        .and_then(|v| v.as_str())
        .ok_or("missing string field 'claim'")?
        .to_string();
    let label = Label::parse(
        value
            .get("label")
            .and_then(|v| v.as_str())
            .ok_or("missing string field 'label'")?,
    )
    .map_err(|e| e.to_string())?;

    let mut gold_groups = Vec::new();
    if label != Label::NotEnoughInfo {
        let groups = value
            .get("evidence")
            .and_then(|v| v.as_array())
            .ok_or("missing array field 'evidence'")?;
        for group in groups {
            let entries = group.as_array().ok_or("evidence group is not an array")?;
            let mut gold: GoldGroup = Vec::new();
            let mut seen = BTreeSet::new();
            for entry in entries {
                let fields = entry.as_array().ok_or("evidence entry is not an array")?;
                if fields.len() < 4 {
                    return Err("evidence entry has fewer than 4 fields".to_string());
                }
                let (doc, line) = (&fields[2], &fields[3]);
                if doc.is_null() || line.is_null() {
                    continue;
                }
                let doc_name = doc
                    .as_str()
                    .ok_or("evidence document is not a string")?
                    .to_string();
                let line_num = line.as_u64().ok_or("evidence line is not a non-negative integer")?;
                if !seen.insert((doc_name.clone(), line_num)) {
                    continue;
                }
                let text = corpus
                    .and_then(|c| c.resolve(&doc_name, line_num))
                    .map(str::to_string);
                gold.push(GoldSentence {
                    doc_name,
                    line_num,
                    text,
                });
            }
            if !gold.is_empty() {
                gold_groups.push(gold);
            }
        }
    }

    Ok(LabeledExample {
        id,
        claim,
        label,
        gold_groups,
        retrieved: Vec::new(),
    })
}

/// Writes a split back to the FEVER claim format. NEI examples get the
/// conventional all-null evidence entry.
pub fn write_fever_jsonl(split: &DatasetSplit, path: &str) -> Result<()> {
    let mut out = String::new();
    for ex in &split.examples {
        let evidence: serde_json::Value = if ex.gold_groups.is_empty() {
            serde_json::json!([[[
                serde_json::Value::Null,
                serde_json::Value::Null,
                serde_json::Value::Null,
                serde_json::Value::Null
            ]]])
        } else {
            serde_json::Value::Array(
                ex.gold_groups
                    .iter()
                    .map(|group| {
                        serde_json::Value::Array(
                            group
                                .iter()
                                .map(|g| {
                                    serde_json::json!([
                                        serde_json::Value::Null,
                                        serde_json::Value::Null,
                                        g.doc_name,
                                        g.line_num
                                    ])
                                })
                                .collect(),
                        )
                    })
                    .collect(),
            )
        };
        let record = serde_json::json!({
            "id": ex.id,
            "claim": ex.claim,
            "label": ex.label.as_fever_str(),
            "evidence": evidence,
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// One record of the prediction file consumed by the metrics module:
/// `{"id", "predicted_label", "predicted_evidence": [[doc, line], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: ExampleId,
    pub predicted_label: Label,
    pub predicted_evidence: Vec<(String, u64)>,
}

pub fn load_predictions_jsonl(path: &str) -> Result<Vec<Prediction>> {
    let file = std::fs::File::open(path).map_err(|source| GearError::Io {
        path: path.to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|source| GearError::Io {
            path: path.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pred: Prediction = serde_json::from_str(&line).map_err(|e| GearError::Parse {
            path: path.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(pred);
    }
    Ok(out)
}

pub fn write_predictions_jsonl(predictions: &[Prediction], path: &str) -> Result<()> {
    let mut out = String::new();
    for pred in predictions {
        out.push_str(&serde_json::to_string(pred).expect("prediction serializes"));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Dev subset that needs multi-sentence reasoning: keeps an example iff it
/// is NEI or no single-sentence gold group suffices (every group has at
/// least two sentences).
pub fn build_difficult_subset(split: &DatasetSplit) -> DatasetSplit {
    DatasetSplit {
        name: split.name,
        examples: split
            .examples
            .iter()
            .filter(|ex| {
                ex.label == Label::NotEnoughInfo || ex.gold_groups.iter().all(|g| g.len() >= 2)
            })
            .cloned()
            .collect(),
    }
}

/// Injects gold evidence with relevance score 1.0 into each example's scored
/// candidate pool (keeping the max score on duplicates), then re-applies the
/// standard top-5/threshold selection. Gold evidence must be resolvable.
pub fn build_evidence_enhanced(
    split: &DatasetSplit,
    scored_candidates: &BTreeMap<ExampleId, Vec<EvidenceSentence>>,
    tau: f64,
) -> Result<DatasetSplit> {
    let mut examples = Vec::with_capacity(split.examples.len());
    for ex in &split.examples {
        let mut pool: BTreeMap<(String, u64), EvidenceSentence> = BTreeMap::new();
        let candidates = scored_candidates
            .get(&ex.id)
            .cloned()
            .unwrap_or_else(|| ex.retrieved.clone());
        for cand in candidates {
            let key = (cand.doc_name.clone(), cand.line_num);
            match pool.get_mut(&key) {
                Some(existing) if existing.score >= cand.score => {}
                _ => {
                    pool.insert(key, cand);
                }
            }
        }
        for gold in ex.gold_groups.iter().flatten() {
            let text = gold.text.clone().ok_or_else(|| {
                GearError::Validation(format!(
                    "example {}: gold evidence ({}, {}) is unresolvable, cannot enhance",
                    ex.id, gold.doc_name, gold.line_num
                ))
            })?;
            let key = (gold.doc_name.clone(), gold.line_num);
            pool.insert(
                key,
                EvidenceSentence {
                    doc_name: gold.doc_name.clone(),
                    line_num: gold.line_num,
                    text,
                    score: 1.0,
                },
            );
        }
        let mut enhanced = ex.clone();
        enhanced.retrieved = select_evidence(pool.into_values().collect(), tau);
        examples.push(enhanced);
    }
    Ok(DatasetSplit {
        name: split.name,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> String {
        let dir = std::env::temp_dir().join("gear_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name).to_str().unwrap().to_string()
    }

    fn gold(doc: &str, line: u64, text: Option<&str>) -> GoldSentence {
        GoldSentence {
            doc_name: doc.to_string(),
            line_num: line,
            text: text.map(str::to_string),
        }
    }

    #[test]
    fn label_round_trip_and_aliases() {
        for label in Label::ALL {
            assert_eq!(Label::parse(label.as_fever_str()).unwrap(), label);
        }
        assert_eq!(Label::parse("SUPPORTED").unwrap(), Label::Supported);
        assert_eq!(Label::parse("NEI").unwrap(), Label::NotEnoughInfo);
        assert!(Label::parse("MAYBE").is_err());
    }

    #[test]
    fn corpus_round_trip_with_tab_lines() {
        let path = tmp("corpus.jsonl");
        let mut corpus = Corpus::new();
        corpus
            .insert(Document {
                doc_name: "Al Jardine".to_string(),
                lines: vec![
                    (0, "He is best known as the band's rhythm guitarist.".to_string()),
                    (1, "Alan Charles Jardine is an American musician.".to_string()),
                ],
            })
            .unwrap();
        corpus.save_jsonl(&path).unwrap();
        let loaded = Corpus::load_jsonl(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(
            loaded.resolve("Al Jardine", 1),
            Some("Alan Charles Jardine is an American musician.")
        );
    }

    #[test]
    fn corpus_rejects_duplicate_line_numbers() {
        let mut corpus = Corpus::new();
        let err = corpus.insert(Document {
            doc_name: "X".to_string(),
            lines: vec![(0, "a".to_string()), (0, "b".to_string())],
        });
        assert!(err.is_err());
    }

    #[test]
    fn fever_record_with_two_sentence_group() {
        let path = tmp("claims.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id": 101, "claim": "Al Jardine is an American rhythm guitarist.", "label": "SUPPORTS", "evidence": [[[8, 9, "Al Jardine", 0], [8, 10, "Al Jardine", 1]]]}"#,
                "\n"
            ),
        )
        .unwrap();
        let split = load_fever_jsonl(&path, None, SplitName::Dev).unwrap();
        assert_eq!(split.examples.len(), 1);
        let ex = &split.examples[0];
        assert_eq!(ex.gold_groups.len(), 1);
        assert_eq!(ex.gold_groups[0].len(), 2);
        assert_eq!(ex.gold_groups[0][0].doc_name, "Al Jardine");
        assert_eq!(ex.gold_groups[0][1].line_num, 1);
    }

    #[test]
    fn nei_record_has_no_gold_groups() {
        let path = tmp("nei.jsonl");
        std::fs::write(
            &path,
            r#"{"id": 5, "claim": "c", "label": "NOT ENOUGH INFO", "evidence": [[[1, 2, null, null]]]}"#,
        )
        .unwrap();
        let split = load_fever_jsonl(&path, None, SplitName::Dev).unwrap();
        assert!(split.examples[0].gold_groups.is_empty());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let path = tmp("dup.jsonl");
        let record = r#"{"id": 7, "claim": "c", "label": "NOT ENOUGH INFO", "evidence": []}"#;
        std::fs::write(&path, format!("{record}\n{record}\n")).unwrap();
        let err = load_fever_jsonl(&path, None, SplitName::Train).unwrap_err();
        assert!(matches!(err, GearError::Validation(_)));
    }

    #[test]
    fn malformed_json_reports_line_number() {
        let path = tmp("broken.jsonl");
        std::fs::write(
            &path,
            "{\"id\": 1, \"claim\": \"c\", \"label\": \"SUPPORTS\", \"evidence\": []}\nnot json\n",
        )
        .unwrap();
        match load_fever_jsonl(&path, None, SplitName::Train).unwrap_err() {
            GearError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn fever_round_trip_preserves_structure() {
        let path = tmp("rt.jsonl");
        let path2 = tmp("rt2.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id": 1, "claim": "a", "label": "SUPPORTS", "evidence": [[[null, null, "D", 0]], [[null, null, "D", 1], [null, null, "E", 2]]]}"#,
                "\n",
                r#"{"id": 2, "claim": "b", "label": "NOT ENOUGH INFO", "evidence": [[[null, null, null, null]]]}"#,
                "\n"
            ),
        )
        .unwrap();
        let split = load_fever_jsonl(&path, None, SplitName::Dev).unwrap();
        write_fever_jsonl(&split, &path2).unwrap();
        let reloaded = load_fever_jsonl(&path2, None, SplitName::Dev).unwrap();
        assert_eq!(split.examples.len(), reloaded.examples.len());
        for (a, b) in split.examples.iter().zip(&reloaded.examples) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.claim, b.claim);
            assert_eq!(a.label, b.label);
            assert_eq!(a.gold_groups, b.gold_groups);
        }
    }

    #[test]
    fn unresolvable_gold_is_kept_and_flagged() {
        let path = tmp("unres.jsonl");
        std::fs::write(
            &path,
            r#"{"id": 3, "claim": "c", "label": "SUPPORTS", "evidence": [[[null, null, "Ghost Doc", 4]]]}"#,
        )
        .unwrap();
        let corpus = Corpus::new();
        let split = load_fever_jsonl(&path, Some(&corpus), SplitName::Dev).unwrap();
        let g = &split.examples[0].gold_groups[0][0];
        assert_eq!(g.doc_name, "Ghost Doc");
        assert!(g.text.is_none());
    }

    #[test]
    fn difficult_subset_definition() {
        let split = DatasetSplit {
            name: SplitName::Dev,
            examples: vec![
                LabeledExample {
                    id: 1,
                    claim: "single".into(),
                    label: Label::Supported,
                    gold_groups: vec![vec![gold("A", 0, None)]],
                    retrieved: vec![],
                },
                LabeledExample {
                    id: 2,
                    claim: "pair".into(),
                    label: Label::Refuted,
                    gold_groups: vec![vec![gold("A", 0, None), gold("B", 1, None)]],
                    retrieved: vec![],
                },
                LabeledExample {
                    id: 3,
                    claim: "nei".into(),
                    label: Label::NotEnoughInfo,
                    gold_groups: vec![],
                    retrieved: vec![],
                },
            ],
        };
        let difficult = build_difficult_subset(&split);
        let ids: Vec<_> = difficult.examples.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![2, 3]);

        // Idempotent and a subset of its input.
        let again = build_difficult_subset(&difficult);
        assert_eq!(
            again.examples.iter().map(|e| e.id).collect::<Vec<_>>(),
            ids
        );
    }

    #[test]
    fn evidence_enhancement_injects_gold_at_score_one() {
        let make = |score_a: f64| EvidenceSentence {
            doc_name: "A".to_string(),
            line_num: 0,
            text: "gold line".to_string(),
            score: score_a,
        };
        let example = LabeledExample {
            id: 10,
            claim: "c".into(),
            label: Label::Supported,
            gold_groups: vec![vec![
                gold("A", 0, Some("gold line")),
                gold("B", 3, Some("other gold")),
            ]],
            retrieved: vec![],
        };
        let split = DatasetSplit {
            name: SplitName::Dev,
            examples: vec![example],
        };
        let mut scored = BTreeMap::new();
        scored.insert(
            10,
            vec![
                make(0.4),
                EvidenceSentence {
                    doc_name: "C".to_string(),
                    line_num: 9,
                    text: "noise".to_string(),
                    score: 0.8,
                },
            ],
        );
        let enhanced = build_evidence_enhanced(&split, &scored, 1e-3).unwrap();
        let retrieved = &enhanced.examples[0].retrieved;
        let keys: BTreeSet<(String, u64)> = retrieved
            .iter()
            .map(|s| (s.doc_name.clone(), s.line_num))
            .collect();
        assert!(keys.contains(&("A".to_string(), 0)));
        assert!(keys.contains(&("B".to_string(), 3)));
        let a = retrieved
            .iter()
            .find(|s| s.doc_name == "A" && s.line_num == 0)
            .unwrap();
        assert_eq!(a.score, 1.0, "dedup keeps the max score");
        assert!(enhanced.examples[0].has_complete_group(&keys));
    }

    #[test]
    fn enhancement_requires_resolvable_gold() {
        let split = DatasetSplit {
            name: SplitName::Dev,
            examples: vec![LabeledExample {
                id: 1,
                claim: "c".into(),
                label: Label::Supported,
                gold_groups: vec![vec![gold("A", 0, None)]],
                retrieved: vec![],
            }],
        };
        let err = build_evidence_enhanced(&split, &BTreeMap::new(), 0.0).unwrap_err();
        assert!(matches!(err, GearError::Validation(_)));
    }

    #[test]
    fn predictions_round_trip() {
        let path = tmp("preds.jsonl");
        let preds = vec![Prediction {
            id: 1,
            predicted_label: Label::Refuted,
            predicted_evidence: vec![("Doc A".to_string(), 0), ("Doc B".to_string(), 2)],
        }];
        write_predictions_jsonl(&preds, &path).unwrap();
        let loaded = load_predictions_jsonl(&path).unwrap();
        assert_eq!(loaded, preds);
    }
}
