//! Sentence encoding: the claim representation `c` and one claim-conditioned
//! representation per evidence sentence.
//!
//! Two interchangeable encoders sit behind [`Encoder`]:
//!
//! * `HashedBow` — a trainable bag-of-words encoder. Tokens are hashed into
//!   a fixed number of buckets; the evidence representation projects the
//!   concatenated pair `[bow(evidence_i) ; bow(claim)]` through a trainable
//!   `F x 2B` matrix followed by tanh, so every evidence vector carries
//!   claim information. The claim itself goes through a separate `F x B`
//!   projection and tanh.
//! * `Precomputed` — feature vectors produced elsewhere (for example by an
//!   externally fine-tuned model), looked up by example id.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{GearError, Result};
use crate::tensorcore::{Graph, Matrix, Node};
use crate::text::{hash_bucket, tokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    HashedBow,
    Precomputed,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderKind::HashedBow => write!(f, "hashed_bow"),
            EncoderKind::Precomputed => write!(f, "precomputed"),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    /// Feature dimension F. 768 matches the full-scale setup; 32 is the desk
    /// default.
    pub feature_dim: usize,
    pub vocab_hash_buckets: usize,
    pub kind: EncoderKind,
}

impl EncoderConfig {
    pub fn hashed_bow(feature_dim: usize, vocab_hash_buckets: usize) -> Self {
        EncoderConfig {
            feature_dim,
            vocab_hash_buckets,
            kind: EncoderKind::HashedBow,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.vocab_hash_buckets == 0 {
            return Err(GearError::Config(format!(
                "encoder dims must be >= 1 (feature_dim {}, buckets {})",
                self.feature_dim, self.vocab_hash_buckets
            )));
        }
        Ok(())
    }
}

/// Trainable weights of the hashed bag-of-words encoder.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HashedBowParams {
    /// F x 2B projection of `[bow(evidence) ; bow(claim)]`.
    pub w_pair: Matrix,
    /// F x B projection of `bow(claim)`.
    pub w_claim: Matrix,
}

impl HashedBowParams {
    pub fn init(config: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let f = config.feature_dim;
        let b = config.vocab_hash_buckets;
        HashedBowParams {
            w_pair: xavier_uniform(f, 2 * b, rng),
            w_claim: xavier_uniform(f, b, rng),
        }
    }
}

/// Uniform Xavier/Glorot initialization: U(-l, l) with l = sqrt(6/(in+out)).
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("xavier samples are finite")
}

/// Bag-of-words counts hashed into `buckets` slots, as a column vector.
pub fn bow_vector(text: &str, buckets: usize) -> Matrix {
    let mut bow = Matrix::zeros(buckets, 1);
    for token in tokens(text) {
        let idx = hash_bucket(&token, buckets);
        bow.data_mut()[idx] += 1.0;
    }
    bow
}

/// One encoded example: the claim vector and one vector per evidence
/// sentence, all of length F, live on the given graph.
#[derive(Debug)]
pub struct SentenceEncoding {
    pub claim_vec: Node,
    pub evidence_vecs: Vec<Node>,
}

/// Encoder parameters lifted onto a graph for one forward pass. For the
/// hashed encoder the projection nodes receive gradients; the precomputed
/// encoder contributes constants only.
pub enum LiftedEncoder<'a> {
    HashedBow {
        config: &'a EncoderConfig,
        w_pair: Node,
        w_claim: Node,
    },
    Precomputed { features: &'a PrecomputedFeatures },
}

impl LiftedEncoder<'_> {
    /// Encodes a claim and its evidence sentences. `example_id` selects the
    /// record when the encoder is precomputed.
    pub fn encode(
        &self,
        g: &mut Graph,
        example_id: u64,
        claim: &str,
        evidence: &[String],
    ) -> Result<SentenceEncoding> {
        if evidence.is_empty() {
            return Err(GearError::EmptyAggregation { op: "encode" });
        }
        match self {
            LiftedEncoder::HashedBow {
                config,
                w_pair,
                w_claim,
            } => {
                let buckets = config.vocab_hash_buckets;
                let claim_bow = bow_vector(claim, buckets);
                let claim_in = g.constant(claim_bow.clone());
                let projected = g.matmul(*w_claim, claim_in)?;
                let claim_vec = g.tanh(projected)?;

                let mut evidence_vecs = Vec::with_capacity(evidence.len());
                for sentence in evidence {
                    let mut pair = bow_vector(sentence, buckets).data().to_vec();
                    pair.extend_from_slice(claim_bow.data());
                    let pair = g.constant(Matrix::from_vec(2 * buckets, 1, pair)?);
                    let projected = g.matmul(*w_pair, pair)?;
                    evidence_vecs.push(g.tanh(projected)?);
                }
                Ok(SentenceEncoding {
                    claim_vec,
                    evidence_vecs,
                })
            }
            LiftedEncoder::Precomputed { features } => {
                let record = features.get(example_id)?;
                let claim_vec = g.constant(record.claim.clone());
                let evidence_vecs = record
                    .evidence
                    .iter()
                    .map(|e| g.constant(e.clone()))
                    .collect();
                Ok(SentenceEncoding {
                    claim_vec,
                    evidence_vecs,
                })
            }
        }
    }
}

/// One record of externally produced features.
#[derive(Debug, Clone)]
pub struct FeatureRecord {
    pub claim: Matrix,
    pub evidence: Vec<Matrix>,
}

/// Feature vectors keyed by example id, loaded from the tab-separated file
/// format: `example_id TAB c_1,..,c_F TAB e1_1,..,e1_F TAB e2_1,...` with one
/// record per line.
#[derive(Debug, Clone)]
pub struct PrecomputedFeatures {
    feature_dim: usize,
    records: BTreeMap<u64, FeatureRecord>,
}

impl PrecomputedFeatures {
    pub fn load(path: &str, feature_dim: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| GearError::Io {
            path: path.to_string(),
            source,
        })?;
        let reader = std::io::BufReader::new(file);
        let mut records = BTreeMap::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line_no = line_no + 1;
            let line = line.map_err(|source| GearError::Io {
                path: path.to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record = Self::parse_line(&line, feature_dim).map_err(|message| {
                GearError::Parse {
                    path: path.to_string(),
                    line: line_no,
                    message,
                }
            })?;
            if records.insert(record.0, record.1).is_some() {
                return Err(GearError::Parse {
                    path: path.to_string(),
                    line: line_no,
                    message: "duplicate example id".to_string(),
                });
            }
        }
        Ok(PrecomputedFeatures {
            feature_dim,
            records,
        })
    }

    fn parse_line(
        line: &str,
        feature_dim: usize,
    ) -> std::result::Result<(u64, FeatureRecord), String> {
        let mut fields = line.split('\t');
        let id: u64 = fields
            .next()
            .ok_or("missing example id field")?
            .trim()
            .parse()
            .map_err(|e| format!("bad example id: {e}"))?;
        let parse_vec = |field: &str| -> std::result::Result<Matrix, String> {
            let values: Vec<f64> = field
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad real: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if values.len() != feature_dim {
                return Err(format!(
                    "vector of length {} when F={feature_dim}",
                    values.len()
                ));
            }
            Matrix::from_vec(feature_dim, 1, values).map_err(|e| e.to_string())
        };
        let claim = parse_vec(fields.next().ok_or("missing claim vector field")?)?;
        let evidence: Vec<Matrix> = fields
            .map(parse_vec)
            .collect::<std::result::Result<_, _>>()?;
        if evidence.is_empty() {
            return Err("record has no evidence vectors".to_string());
        }
        Ok((id, FeatureRecord { claim, evidence }))
    }

    pub fn save(&self, path: &str) -> Result<()> {
        let mut out = String::new();
        for (id, record) in &self.records {
            out.push_str(&id.to_string());
            out.push('\t');
            out.push_str(&join_reals(&record.claim));
            for e in &record.evidence {
                out.push('\t');
                out.push_str(&join_reals(e));
            }
            out.push('\n');
        }
        let mut file = std::fs::File::create(path).map_err(|source| GearError::Io {
            path: path.to_string(),
            source,
        })?;
        file.write_all(out.as_bytes()).map_err(|source| GearError::Io {
            path: path.to_string(),
            source,
        })
    }

    pub fn from_records(
        feature_dim: usize,
        records: impl IntoIterator<Item = (u64, FeatureRecord)>,
    ) -> Result<Self> {
        let records: BTreeMap<u64, FeatureRecord> = records.into_iter().collect();
        for (id, r) in &records {
            if r.claim.shape() != (feature_dim, 1)
                || r.evidence.iter().any(|e| e.shape() != (feature_dim, 1))
            {
                return Err(GearError::DimensionMismatch {
                    op: "precomputed feature record",
                    left_rows: r.claim.rows(),
                    left_cols: r.claim.cols(),
                    right_rows: feature_dim,
                    right_cols: 1,
                });
            }
            if r.evidence.is_empty() {
                return Err(GearError::Validation(format!(
                    "feature record {id} has no evidence vectors"
                )));
            }
        }
        Ok(PrecomputedFeatures {
            feature_dim,
            records,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn get(&self, example_id: u64) -> Result<&FeatureRecord> {
        self.records
            .get(&example_id)
            .ok_or_else(|| GearError::MissingKey(format!("example id {example_id}")))
    }
}

fn join_reals(m: &Matrix) -> String {
    m.data()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_config() -> EncoderConfig {
        EncoderConfig::hashed_bow(8, 16)
    }

    fn lift<'a>(
        g: &mut Graph,
        config: &'a EncoderConfig,
        params: &HashedBowParams,
    ) -> LiftedEncoder<'a> {
        let w_pair = g.param(params.w_pair.clone());
        let w_claim = g.param(params.w_claim.clone());
        LiftedEncoder::HashedBow {
            config,
            w_pair,
            w_claim,
        }
    }

    fn encode_values(
        config: &EncoderConfig,
        params: &HashedBowParams,
        claim: &str,
        evidence: &[String],
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let enc = lift(&mut g, config, params);
        let out = enc.encode(&mut g, 0, claim, evidence).unwrap();
        (
            g.value(out.claim_vec).data().to_vec(),
            out.evidence_vecs
                .iter()
                .map(|&n| g.value(n).data().to_vec())
                .collect(),
        )
    }

    #[test]
    fn encode_is_deterministic() {
        let config = test_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = HashedBowParams::init(&config, &mut rng);
        let ev = vec!["a".to_string()];
        let first = encode_values(&config, &params, "the claim", &ev);
        let second = encode_values(&config, &params, "the claim", &ev);
        assert_eq!(first, second);
    }

    #[test]
    fn evidence_order_equivariance() {
        let config = test_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = HashedBowParams::init(&config, &mut rng);
        let ev = vec![
            "alpha beta".to_string(),
            "gamma".to_string(),
            "delta epsilon".to_string(),
        ];
        let permuted = vec![ev[2].clone(), ev[0].clone(), ev[1].clone()];
        let (_, original) = encode_values(&config, &params, "a claim", &ev);
        let (_, swapped) = encode_values(&config, &params, "a claim", &permuted);
        assert_eq!(swapped[0], original[2]);
        assert_eq!(swapped[1], original[0]);
        assert_eq!(swapped[2], original[1]);
    }

    #[test]
    fn evidence_encoding_depends_on_evidence_text() {
        let config = test_config();
        // Verify the probe tokens land in distinct buckets before relying
        // on them to produce different encodings.
        assert_ne!(
            hash_bucket("x", config.vocab_hash_buckets),
            hash_bucket("z", config.vocab_hash_buckets)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = HashedBowParams::init(&config, &mut rng);
        let (_, with_x) = encode_values(&config, &params, "x y", &["x".to_string()]);
        let (_, with_z) = encode_values(&config, &params, "x y", &["z".to_string()]);
        assert_ne!(with_x[0], with_z[0]);
    }

    #[test]
    fn outputs_are_tanh_bounded() {
        let config = test_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = HashedBowParams::init(&config, &mut rng);
        let (c, evs) = encode_values(
            &config,
            &params,
            "some words repeated words words",
            &["more words".to_string()],
        );
        for v in c.iter().chain(evs[0].iter()) {
            assert!(v.is_finite() && *v > -1.0 && *v < 1.0);
        }
    }

    #[test]
    fn empty_evidence_is_an_error() {
        let config = test_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = HashedBowParams::init(&config, &mut rng);
        let mut g = Graph::new();
        let enc = lift(&mut g, &config, &params);
        let err = enc.encode(&mut g, 0, "claim", &[]).unwrap_err();
        assert!(matches!(err, GearError::EmptyAggregation { .. }));
    }

    #[test]
    fn precomputed_round_trip() {
        let dir = std::env::temp_dir().join("gear_enc_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("feats.tsv");
        let path = path.to_str().unwrap();

        let record = FeatureRecord {
            claim: Matrix::column(&[0.1, 0.2, 0.3, 0.4]).unwrap(),
            evidence: vec![
                Matrix::column(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
                Matrix::column(&[-1.0, -2.0, -3.0, -4.0]).unwrap(),
            ],
        };
        let feats = PrecomputedFeatures::from_records(4, [(7, record.clone())]).unwrap();
        feats.save(path).unwrap();

        let loaded = PrecomputedFeatures::load(path, 4).unwrap();
        let got = loaded.get(7).unwrap();
        assert_eq!(got.claim, record.claim);
        assert_eq!(got.evidence, record.evidence);

        let mut g = Graph::new();
        let enc = LiftedEncoder::Precomputed { features: &loaded };
        let out = enc
            .encode(&mut g, 7, "ignored", &["ignored".to_string()])
            .unwrap();
        assert_eq!(g.value(out.claim_vec).data(), record.claim.data());

        assert!(matches!(
            loaded.get(8).unwrap_err(),
            GearError::MissingKey(_)
        ));
    }

    #[test]
    fn precomputed_record_with_five_evidence_vectors() {
        let evidence = (0..5)
            .map(|i| Matrix::column(&[i as f64, 0.0]).unwrap())
            .collect();
        let record = FeatureRecord {
            claim: Matrix::column(&[0.5, 0.5]).unwrap(),
            evidence,
        };
        let feats = PrecomputedFeatures::from_records(2, [(1, record)]).unwrap();
        assert_eq!(feats.get(1).unwrap().evidence.len(), 5);
    }

    #[test]
    fn precomputed_length_mismatch_is_reported_with_line() {
        let dir = std::env::temp_dir().join("gear_enc_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.tsv");
        std::fs::write(&path, "3\t0.1,0.2,0.3\t1.0,2.0,3.0\n").unwrap();
        let err = PrecomputedFeatures::load(path.to_str().unwrap(), 4).unwrap_err();
        match err {
            GearError::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("length 3"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
