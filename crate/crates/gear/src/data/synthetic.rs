//! Synthetic two-hop verification task with labels correct by construction.
//!
//! The generated world contains person documents and band documents. Every
//! person belongs to exactly one band; every surname has two bands named
//! after it ("The <Surname> Rebels" / "The <Surname> Harbor"), so retrieving
//! documents for a claim about a person also surfaces a partner band that
//! acts as a distractor. A claim
//!
//! ```text
//! <Person> is a member of a band that performs <genre> music.
//! ```
//!
//! is SUPPORTED when the person's band performs that genre, REFUTED when it
//! performs another one, and NOT ENOUGH INFO when the band's genre is absent
//! from the corpus. Deciding always takes two sentences from two documents:
//! the membership line fixes which band is the person's, the band's genre
//! line fixes the genre. REFUTED claims use the partner band's genre as the
//! claimed genre, so the distractor genre line always matches the claim on
//! refuted examples and never on supported ones; no single sentence or
//! per-sentence statistic separates the two.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::data::{
    Corpus, DatasetSplit, Document, GoldSentence, Label, LabeledExample, SplitName,
};
use crate::error::{GearError, Result};

// First names are syllable pairs, unique per person, so claims about one
// person never share a first-name token with another person's document
// title; otherwise the top-7 document cap fills with same-first-name
// distractors and pushes the band documents out entirely.
const FIRST_A: [&str; 16] = [
    "Al", "Bren", "Cor", "Dag", "El", "Fen", "Gil", "Hal", "Ing", "Jor", "Kel", "Lom", "Mer",
    "Ned", "Os", "Pim",
];
const FIRST_B: [&str; 8] = ["an", "beth", "dor", "ia", "lin", "mar", "ric", "wen"];
const LAST_NAMES: [&str; 48] = [
    "Stone", "Vale", "Marsh", "Quill", "Frost", "Reyes", "Holt", "Ives", "Lark", "Moss", "Pike",
    "Rook", "Ash", "Birch", "Crane", "Dunn", "Ember", "Fable", "Gale", "Harrow", "Isley", "Juniper",
    "Kestrel", "Locke", "Mercer", "Nettle", "Orchard", "Pine", "Quarry", "Ridge", "Sable", "Thorn",
    "Umber", "Vesper", "Wilder", "Yarrow", "Zephyr", "Alder", "Briar", "Cedar", "Dove", "Elm",
    "Fern", "Grove", "Hazel", "Iris", "Jade", "Kite",
];

fn first_name(i: usize) -> String {
    format!("{}{}", FIRST_A[i % FIRST_A.len()], FIRST_B[(i / FIRST_A.len()) % FIRST_B.len()])
}
const BAND_SUFFIXES: [&str; 2] = ["Rebels", "Harbor"];
const GENRES: [&str; 6] = ["jazz", "blues", "folk", "techno", "opera", "salsa"];
const CITIES: [&str; 4] = ["Dorwick", "Melfield", "Arborlyn", "Quayside"];
const YEARS: [u32; 8] = [1958, 1961, 1964, 1967, 1970, 1973, 1976, 1979];

/// Line number of the membership sentence in every person document.
pub const MEMBER_LINE: u64 = 1;
/// Line number of the genre sentence in every band document that has one.
pub const GENRE_LINE: u64 = 1;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub num_examples: usize,
    pub seed: u64,
    /// Rough number of fact sentences in the world; the generator creates
    /// about one person (three sentences) per three facts.
    pub facts_per_world: usize,
    /// Target SUPPORTED / REFUTED / NEI proportions.
    pub label_ratio: [f64; 3],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_examples: 300,
            seed: 42,
            facts_per_world: 90,
            label_ratio: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        }
    }
}

#[derive(Debug, Clone)]
struct Band {
    name: String,
    genre: Option<&'static str>,
    partner: usize,
}

#[derive(Debug, Clone)]
struct Person {
    name: String,
    band: usize,
}

#[derive(Debug)]
struct World {
    persons: Vec<Person>,
    bands: Vec<Band>,
    corpus: Corpus,
    /// Persons whose band has a genre line (eligible for SUPPORTED/REFUTED).
    sr_pool: Vec<usize>,
    /// Persons whose band has no genre line (eligible for NEI).
    nei_pool: Vec<usize>,
}

fn build_world(seed: u64, facts_per_world: usize) -> Result<World> {
    let num_persons = (facts_per_world / 3).max(6);
    // At most two persons per surname: the retrieval pool for a claim is
    // then one stranger document plus the two band documents, which leaves
    // the five-sentence evidence budget enough slack for both gold
    // sentences and the distractor genre line.
    let max_persons = (2 * LAST_NAMES.len()).min(FIRST_A.len() * FIRST_B.len());
    if num_persons > max_persons {
        return Err(GearError::Config(format!(
            "facts_per_world {facts_per_world} needs more than {max_persons} persons"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let used_lastnames = num_persons.min(LAST_NAMES.len());
    // Every third surname gets a genre-less primary band; claims about its
    // members are undecidable from the corpus.
    let is_nei_lastname = |l: usize| l % 3 == 2;

    let mut bands = Vec::with_capacity(2 * used_lastnames);
    for l in 0..used_lastnames {
        let rebels = format!("The {} {}", LAST_NAMES[l], BAND_SUFFIXES[0]);
        let harbor = format!("The {} {}", LAST_NAMES[l], BAND_SUFFIXES[1]);
        let (rebels_genre, harbor_genre) = if is_nei_lastname(l) {
            (None, Some(GENRES[rng.random_range(0..GENRES.len())]))
        } else {
            let g1 = GENRES[rng.random_range(0..GENRES.len())];
            let mut g2 = GENRES[rng.random_range(0..GENRES.len())];
            while g2 == g1 {
                g2 = GENRES[rng.random_range(0..GENRES.len())];
            }
            (Some(g1), Some(g2))
        };
        bands.push(Band {
            name: rebels,
            genre: rebels_genre,
            partner: 2 * l + 1,
        });
        bands.push(Band {
            name: harbor,
            genre: harbor_genre,
            partner: 2 * l,
        });
    }

    let mut persons = Vec::with_capacity(num_persons);
    let mut sr_pool = Vec::new();
    let mut nei_pool = Vec::new();
    for i in 0..num_persons {
        let last = i % LAST_NAMES.len();
        let name = format!("{} {}", first_name(i), LAST_NAMES[last]);
        let band = if is_nei_lastname(last) {
            // Members of the genre-less band; its partner still has a genre
            // line, so a distractor is always retrievable.
            2 * last
        } else if rng.random_range(0..2) == 0 {
            2 * last
        } else {
            2 * last + 1
        };
        if bands[band].genre.is_some() {
            sr_pool.push(i);
        } else {
            nei_pool.push(i);
        }
        persons.push(Person { name, band });
    }

    let mut corpus = Corpus::new();
    for person in &persons {
        let year = YEARS[rng.random_range(0..YEARS.len())];
        let city = CITIES[rng.random_range(0..CITIES.len())];
        corpus.insert(Document {
            doc_name: person.name.clone(),
            lines: vec![
                (0, format!("{} was born in {}.", person.name, year)),
                (
                    MEMBER_LINE,
                    format!("{} is a member of {}.", person.name, bands[person.band].name),
                ),
                (2, format!("{} lives in {}.", person.name, city)),
            ],
        })?;
    }
    for band in &bands {
        let year = YEARS[rng.random_range(0..YEARS.len())];
        let city = CITIES[rng.random_range(0..CITIES.len())];
        let mut lines = vec![(0, format!("{} was formed in {}.", band.name, year))];
        if let Some(genre) = band.genre {
            lines.push((GENRE_LINE, format!("{} performs {} music.", band.name, genre)));
            lines.push((2, format!("{} is based in {}.", band.name, city)));
        } else {
            lines.push((1, format!("{} is based in {}.", band.name, city)));
        }
        corpus.insert(Document {
            doc_name: band.name.clone(),
            lines,
        })?;
    }

    Ok(World {
        persons,
        bands,
        corpus,
        sr_pool,
        nei_pool,
    })
}

/// Deterministic per-label counts for `n` examples under a ratio.
fn label_counts(n: usize, ratio: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = ratio.iter().sum();
    if ratio.iter().any(|r| *r < 0.0) || total <= 0.0 {
        return Err(GearError::Config(format!("bad label ratio {ratio:?}")));
    }
    let mut counts = [0usize; 3];
    counts[0] = ((n as f64) * ratio[0] / total).round() as usize;
    counts[1] = (((n as f64) * ratio[1] / total).round() as usize).min(n - counts[0].min(n));
    counts[0] = counts[0].min(n);
    counts[2] = n - counts[0] - counts[1];
    Ok(counts)
}

fn make_examples(
    world: &World,
    sr_pool: &[usize],
    nei_pool: &[usize],
    counts: [usize; 3],
    rng: &mut ChaCha8Rng,
    id_base: u64,
) -> Result<Vec<LabeledExample>> {
    if counts[0] + counts[1] > 0 && sr_pool.is_empty() {
        return Err(GearError::Config(
            "no persons available for SUPPORTED/REFUTED claims".to_string(),
        ));
    }
    if counts[2] > 0 && nei_pool.is_empty() {
        return Err(GearError::Config(
            "no persons available for NEI claims".to_string(),
        ));
    }

    let mut labels = Vec::with_capacity(counts.iter().sum());
    for (label, &count) in Label::ALL.iter().zip(counts.iter()) {
        labels.extend(std::iter::repeat(*label).take(count));
    }
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), rng);

    let mut examples = Vec::with_capacity(labels.len());
    for (i, label) in labels.into_iter().enumerate() {
        let (person, genre) = match label {
            Label::Supported => {
                let p = &world.persons[sr_pool[rng.random_range(0..sr_pool.len())]];
                (p, world.bands[p.band].genre.expect("sr band has genre"))
            }
            Label::Refuted => {
                let p = &world.persons[sr_pool[rng.random_range(0..sr_pool.len())]];
                let partner = world.bands[p.band].partner;
                (p, world.bands[partner].genre.expect("partner has genre"))
            }
            Label::NotEnoughInfo => {
                let p = &world.persons[nei_pool[rng.random_range(0..nei_pool.len())]];
                let partner_genre =
                    world.bands[world.bands[p.band].partner].genre.expect("partner has genre");
                // Half the NEI claims reuse the distractor band's genre so
                // that a matching genre line alone never settles the label.
                let genre = if rng.random_range(0..2) == 0 {
                    partner_genre
                } else {
                    let mut g = GENRES[rng.random_range(0..GENRES.len())];
                    while g == partner_genre {
                        g = GENRES[rng.random_range(0..GENRES.len())];
                    }
                    g
                };
                (p, genre)
            }
        };
        let claim = format!(
            "{} is a member of a band that performs {} music.",
            person.name, genre
        );
        let gold_groups = if label == Label::NotEnoughInfo {
            Vec::new()
        } else {
            let band = &world.bands[person.band];
            let member_text = world
                .corpus
                .resolve(&person.name, MEMBER_LINE)
                .expect("member line exists")
                .to_string();
            let genre_text = world
                .corpus
                .resolve(&band.name, GENRE_LINE)
                .expect("genre line exists")
                .to_string();
            vec![vec![
                GoldSentence {
                    doc_name: person.name.clone(),
                    line_num: MEMBER_LINE,
                    text: Some(member_text),
                },
                GoldSentence {
                    doc_name: band.name.clone(),
                    line_num: GENRE_LINE,
                    text: Some(genre_text),
                },
            ]]
        };
        debug_assert!(self_check(&claim, label, &gold_groups));
        examples.push(LabeledExample {
            id: id_base + i as u64,
            claim,
            label,
            gold_groups,
            retrieved: Vec::new(),
        });
    }
    Ok(examples)
}

/// Generator self-check: the full gold group decides the label under the
/// rule semantics, and no proper subset does.
fn self_check(claim: &str, label: Label, gold_groups: &[Vec<GoldSentence>]) -> bool {
    if label == Label::NotEnoughInfo {
        return gold_groups.is_empty();
    }
    gold_groups.iter().all(|group| {
        let texts: Vec<&str> = group
            .iter()
            .map(|g| g.text.as_deref().expect("generated gold has text"))
            .collect();
        if rule_label_from_texts(claim, &texts) != Some(label) {
            return false;
        }
        (0..texts.len()).all(|drop| {
            let subset: Vec<&str> = texts
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != drop)
                .map(|(_, t)| *t)
                .collect();
            rule_label_from_texts(claim, &subset).is_none()
        })
    })
}

/// Rule-based evaluation of a synthetic claim against a set of evidence
/// sentences, independent of the generator's internal tables: membership and
/// genre facts are parsed back out of the sentence templates. Returns `None`
/// when the facts are insufficient to decide.
pub fn rule_label_from_texts(claim: &str, evidence: &[&str]) -> Option<Label> {
    let (person, claimed_genre) = parse_claim(claim)?;
    let mut member: BTreeMap<String, String> = BTreeMap::new();
    let mut genres: BTreeMap<String, String> = BTreeMap::new();
    for text in evidence {
        if let Some((band, genre)) = parse_genre_fact(text) {
            genres.insert(band, genre);
        } else if let Some((p, band)) = parse_member_fact(text) {
            member.insert(p, band);
        }
    }
    let band = member.get(&person)?;
    let genre = genres.get(band)?;
    Some(if *genre == claimed_genre {
        Label::Supported
    } else {
        Label::Refuted
    })
}

fn parse_claim(claim: &str) -> Option<(String, String)> {
    let body = claim.strip_suffix(" music.")?;
    let (person, genre) = body.split_once(" is a member of a band that performs ")?;
    Some((person.to_string(), genre.to_string()))
}

fn parse_member_fact(text: &str) -> Option<(String, String)> {
    let body = text.strip_suffix('.')?;
    let (person, band) = body.split_once(" is a member of ")?;
    Some((person.to_string(), band.to_string()))
}

fn parse_genre_fact(text: &str) -> Option<(String, String)> {
    let body = text.strip_suffix(" music.")?;
    let (band, genre) = body.split_once(" performs ")?;
    Some((band.to_string(), genre.to_string()))
}

/// Builds a random world and one dataset split over it. Deterministic per
/// seed: regenerating with the same config yields byte-identical output.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(DatasetSplit, Corpus)> {
    if config.num_examples == 0 {
        return Err(GearError::Config("num_examples must be >= 1".to_string()));
    }
    let world = build_world(config.seed, config.facts_per_world)?;
    let counts = label_counts(config.num_examples, config.label_ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xc1a1_35);
    let examples = make_examples(&world, &world.sr_pool, &world.nei_pool, counts, &mut rng, 1)?;
    let split = DatasetSplit {
        name: SplitName::Train,
        examples,
    };
    split.validate()?;
    Ok((split, world.corpus))
}

/// Train/dev/test splits over one shared world, with disjoint person pools
/// per split so claim-level memorization cannot transfer across splits.
#[derive(Debug)]
pub struct SyntheticSplits {
    pub corpus: Corpus,
    pub train: DatasetSplit,
    pub dev: DatasetSplit,
    pub test: DatasetSplit,
}

pub fn generate_splits(
    train_n: usize,
    dev_n: usize,
    test_n: usize,
    seed: u64,
    facts_per_world: usize,
) -> Result<SyntheticSplits> {
    let world = build_world(seed, facts_per_world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5711_75);
    let mut sr = world.sr_pool.clone();
    let mut nei = world.nei_pool.clone();
    rand::seq::SliceRandom::shuffle(sr.as_mut_slice(), &mut rng);
    rand::seq::SliceRandom::shuffle(nei.as_mut_slice(), &mut rng);

    let wants = [train_n, dev_n, test_n];
    let total: usize = wants.iter().sum();
    if total == 0 {
        return Err(GearError::Config("no examples requested".to_string()));
    }
    let sr_parts = partition_pool(&sr, wants, total)?;
    let nei_parts = partition_pool(&nei, wants, total)?;

    let thirds = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
    let mut id_base = 1;
    let mut splits = Vec::new();
    for (i, (&n, name)) in wants
        .iter()
        .zip([SplitName::Train, SplitName::Dev, SplitName::Test])
        .enumerate()
    {
        let counts = label_counts(n, thirds)?;
        let examples = make_examples(
            &world,
            &sr_parts[i],
            &nei_parts[i],
            counts,
            &mut rng,
            id_base,
        )?;
        id_base += n as u64;
        let split = DatasetSplit { name, examples };
        split.validate()?;
        splits.push(split);
    }
    let test = splits.pop().expect("three splits");
    let dev = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(SyntheticSplits {
        corpus: world.corpus,
        train,
        dev,
        test,
    })
}

/// Splits a person pool proportionally to the requested example counts,
/// guaranteeing at least one person per non-empty part.
fn partition_pool(pool: &[usize], wants: [usize; 3], total: usize) -> Result<[Vec<usize>; 3]> {
    let needed = wants.iter().filter(|&&w| w > 0).count();
    if pool.len() < needed {
        return Err(GearError::Config(format!(
            "world too small: {} persons in pool for {needed} splits (raise facts_per_world)",
            pool.len()
        )));
    }
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut cursor = 0;
    for i in 0..3 {
        if wants[i] == 0 {
            continue;
        }
        let share = ((pool.len() * wants[i]) / total).max(1);
        let end = if i == 2 || wants[i + 1..].iter().all(|&w| w == 0) {
            pool.len()
        } else {
            (cursor + share).min(pool.len() - 1)
        };
        parts[i] = pool[cursor..end].to_vec();
        cursor = end;
    }
    for (i, part) in parts.iter().enumerate() {
        if wants[i] > 0 && part.is_empty() {
            return Err(GearError::Config(
                "world too small for the requested split sizes".to_string(),
            ));
        }
    }
    Ok(parts)
}
