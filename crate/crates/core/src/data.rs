//! ETHICS Utilitarianism pairs: CSV loading, balanced labeling and split stats.
//!
//! Each row of `util_{train,test,test_hard}.csv` holds two scenarios, the
//! first being the more pleasant one. Feeding that ordering straight to a
//! classifier would make every label 1, so [`make_labeled_pairs`] swaps each
//! pair with probability 1/2 from a seeded generator.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset file not found: {0}")]
    FileNotFound(String),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("empty scenario text")]
    EmptyScenario,
    #[error("unknown split {0:?} (expected train, test or test_hard)")]
    UnknownSplit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A first-person scenario sentence, kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Scenario(String);

impl Scenario {
    pub fn new(text: impl Into<String>) -> Result<Self, DataError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DataError::EmptyScenario);
        }
        Ok(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Scenario {
    type Error = DataError;
    fn try_from(s: String) -> Result<Self, DataError> {
        Scenario::new(s)
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.0
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A dataset row: `better` is more pleasant than `worse`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPair {
    pub better: Scenario,
    pub worse: Scenario,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub first: Scenario,
    pub second: Scenario,
    /// 1 iff `first` is the more pleasant scenario.
    pub label: u8,
    /// 1-based position in the source split.
    pub pair_id: usize,
}

impl LabeledPair {
    /// The same comparison with the scenarios in the other order.
    pub fn swapped(&self) -> LabeledPair {
        LabeledPair {
            first: self.second.clone(),
            second: self.first.clone(),
            label: 1 - self.label,
            pair_id: self.pair_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    TestHard,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::TestHard => "test_hard",
        }
    }

    /// File name used by the ETHICS distribution, e.g. `util_test_hard.csv`.
    pub fn file_name(self) -> String {
        format!("util_{}.csv", self.as_str())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "test_hard" | "test-hard" => Ok(Split::TestHard),
            other => Err(DataError::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub split: Split,
    pub pairs: Vec<LabeledPair>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.pairs.iter().map(|p| p.label).collect()
    }

    /// Every pair swapped, labels flipped.
    pub fn swapped(&self) -> Dataset {
        Dataset {
            split: self.split,
            pairs: self.pairs.iter().map(LabeledPair::swapped).collect(),
        }
    }

    /// Null control: keeps scenario order but replaces every label by an
    /// independent fair coin. Labels no longer describe the scenarios.
    pub fn with_coin_flip_labels(&self, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Dataset {
            split: self.split,
            pairs: self
                .pairs
                .iter()
                .map(|p| LabeledPair {
                    label: u8::from(rng.random_bool(0.5)),
                    ..p.clone()
                })
                .collect(),
        }
    }
}

/// Header rows we recognise and skip. Only an exact match counts.
const KNOWN_HEADERS: &[[&str; 2]] = &[
    ["baseline", "less_pleasant"],
    ["better", "worse"],
    ["first", "second"],
];

/// Reads one ETHICS util CSV file. The split tag is informational only; the
/// caller keeps it with the pairs.
pub fn load_util_csv(path: &Path, split: Split) -> Result<Vec<RawPair>, DataError> {
    if !path.is_file() {
        return Err(DataError::FileNotFound(path.display().to_string()));
    }
    let file = std::fs::File::open(path)?;
    let pairs = read_util_csv(file)?;
    log::info!("loaded {} {} pairs from {}", pairs.len(), split, path.display());
    Ok(pairs)
}

/// [`load_util_csv`] over any reader.
pub fn read_util_csv<R: std::io::Read>(reader: R) -> Result<Vec<RawPair>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut pairs = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DataError::ParseError {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
        if rec.len() != 2 {
            return Err(DataError::ParseError {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        if idx == 0 && KNOWN_HEADERS.iter().any(|h| h[0] == &rec[0] && h[1] == &rec[1]) {
            continue;
        }
        let scenario = |s: &str| {
            Scenario::new(s).map_err(|_| DataError::ParseError {
                line,
                message: "empty scenario".to_string(),
            })
        };
        pairs.push(RawPair {
            better: scenario(&rec[0])?,
            worse: scenario(&rec[1])?,
        });
    }
    if pairs.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(pairs)
}

/// Writes pairs in the ETHICS util layout (no header, both fields quoted).
pub fn write_util_csv<W: Write>(out: W, pairs: &[RawPair]) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .quote_style(csv::QuoteStyle::Always)
        .from_writer(out);
    for p in pairs {
        w.write_record([p.better.text(), p.worse.text()])
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Orders each pair by an independent seeded coin: heads keeps
/// `(better, worse, 1)`, tails gives `(worse, better, 0)`.
pub fn make_labeled_pairs(raw: &[RawPair], split: Split, seed: u64) -> Result<Dataset, DataError> {
    if raw.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = raw
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let swap = rng.random_bool(0.5);
            let (first, second, label) = if swap {
                (p.worse.clone(), p.better.clone(), 0)
            } else {
                (p.better.clone(), p.worse.clone(), 1)
            };
            LabeledPair {
                first,
                second,
                label,
                pair_id: i + 1,
            }
        })
        .collect();
    Ok(Dataset { split, pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    pub count: usize,
    /// Fraction of pairs whose label is 0, i.e. presented worse-first.
    pub swapped_fraction: f64,
}

pub fn split_stats(d: &Dataset) -> SplitStats {
    let swapped = d.pairs.iter().filter(|p| p.label == 0).count();
    SplitStats {
        split: d.split,
        count: d.len(),
        swapped_fraction: if d.is_empty() {
            0.0
        } else {
            swapped as f64 / d.len() as f64
        },
    }
}
