//! Corpus handling: dataset loading and validation, domain partitioning,
//! and the normalized log-frequency feature used for feature-enriched runs.
//!
//! Dataset files are UTF-8 TSV with a header row and columns
//! `id  corpus  sentence  token  complexity` (complexity optional for
//! unlabeled test files). Frequency tables are headerless two-column TSV
//! `token  count`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two prediction tasks an instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtask {
    SingleWord,
    Mwe,
}

impl Subtask {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subtask::SingleWord => "single_word",
            Subtask::Mwe => "mwe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single_word" | "single" => Ok(Subtask::SingleWord),
            "mwe" | "multi" => Ok(Subtask::Mwe),
            other => Err(Error::invalid(format!(
                "unknown subtask '{other}' (expected single_word or mwe)"
            ))),
        }
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Source corpus of a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Europarl,
    Biomed,
    Bible,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Europarl, Domain::Biomed, Domain::Bible];

    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Europarl => "europarl",
            Domain::Biomed => "biomed",
            Domain::Bible => "bible",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "europarl" => Some(Domain::Europarl),
            "biomed" => Some(Domain::Biomed),
            "bible" => Some(Domain::Bible),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dataset split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Trial,
    Test,
}

/// One annotated example: a sentence with a target word or multiword
/// expression and an optional gold complexity in [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub subtask: Subtask,
    pub domain: Domain,
    pub sentence: String,
    pub target: String,
    pub gold: Option<f64>,
}

impl Instance {
    /// Checks the per-instance invariants; `context` names the row for errors.
    pub fn validate(&self, context: &str) -> Result<()> {
        if self.target.trim().is_empty() {
            return Err(Error::invalid(format!("{context}: empty target")));
        }
        if self.subtask == Subtask::Mwe && self.target.split_whitespace().count() < 2 {
            return Err(Error::invalid(format!(
                "{context}: MWE target '{}' has fewer than 2 components",
                self.target
            )));
        }
        if let Some(g) = self.gold {
            if !(0.0..=1.0).contains(&g) || !g.is_finite() {
                return Err(Error::invalid(format!(
                    "{context}: complexity {g} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// A loaded split: all instances share one subtask and have unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subtask: Subtask,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(subtask: Subtask, instances: Vec<Instance>) -> Result<Self> {
        let mut seen = HashSet::new();
        for inst in &instances {
            if inst.subtask != subtask {
                return Err(Error::invalid(format!(
                    "instance {} has subtask {} in a {} dataset",
                    inst.id, inst.subtask, subtask
                )));
            }
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::invalid(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(Dataset { subtask, instances })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// True when every instance carries a gold label.
    pub fn fully_labeled(&self) -> bool {
        self.instances.iter().all(|i| i.gold.is_some())
    }
}

/// Header-name overrides for dataset files that deviate from the
/// `id/corpus/sentence/token/complexity` convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: String,
    pub corpus: String,
    pub sentence: String,
    pub token: String,
    pub complexity: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            corpus: "corpus".into(),
            sentence: "sentence".into(),
            token: "token".into(),
            complexity: "complexity".into(),
        }
    }
}

/// Loads a TSV dataset. The complexity column may be absent (unlabeled
/// test files); every malformed row aborts with a row-identifying message.
pub fn load_dataset(path: impl AsRef<Path>, subtask: Subtask) -> Result<Dataset> {
    load_dataset_with_columns(path, subtask, &ColumnMap::default())
}

pub fn load_dataset_with_columns(
    path: impl AsRef<Path>,
    subtask: Subtask,
    columns: &ColumnMap,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let fname = path.display().to_string();

    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(&fname, 1, "missing header row")),
    };
    let fields: Vec<&str> = header.trim_end_matches(['\r', '\n']).split('\t').collect();
    let col = |name: &str| fields.iter().position(|f| *f == name);
    let idx_id = col(&columns.id)
        .ok_or_else(|| Error::parse(&fname, 1, format!("missing column '{}'", columns.id)))?;
    let idx_corpus = col(&columns.corpus)
        .ok_or_else(|| Error::parse(&fname, 1, format!("missing column '{}'", columns.corpus)))?;
    let idx_sentence = col(&columns.sentence)
        .ok_or_else(|| Error::parse(&fname, 1, format!("missing column '{}'", columns.sentence)))?;
    let idx_token = col(&columns.token)
        .ok_or_else(|| Error::parse(&fname, 1, format!("missing column '{}'", columns.token)))?;
    let idx_complexity = col(&columns.complexity);

    let mut instances = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let row = lineno + 1; // 1-based line number
        let cells: Vec<&str> = line.split('\t').collect();
        let cell = |idx: usize, what: &str| -> Result<&str> {
            cells
                .get(idx)
                .copied()
                .ok_or_else(|| Error::parse(&fname, row, format!("missing {what} cell")))
        };

        let id = cell(idx_id, "id")?.to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::parse(&fname, row, format!("duplicate id '{id}'")));
        }
        let corpus = cell(idx_corpus, "corpus")?;
        let domain = Domain::parse(corpus)
            .ok_or_else(|| Error::parse(&fname, row, format!("unknown domain '{corpus}'")))?;
        let sentence = cell(idx_sentence, "sentence")?.to_string();
        let target = cell(idx_token, "token")?.to_string();
        let gold = match idx_complexity {
            Some(idx) => match cells.get(idx) {
                Some(raw) if !raw.is_empty() => {
                    let v: f64 = raw.parse().map_err(|_| {
                        Error::parse(&fname, row, format!("unparseable complexity '{raw}'"))
                    })?;
                    Some(v)
                }
                _ => None,
            },
            None => None,
        };

        let inst = Instance {
            id,
            subtask,
            domain,
            sentence,
            target,
            gold,
        };
        inst.validate(&format!("{fname}:{row}"))
            .map_err(|e| Error::parse(&fname, row, e.to_string()))?;
        instances.push(inst);
    }

    Dataset::new(subtask, instances)
}

/// Writes a dataset back to TSV. Labels round-trip exactly (shortest
/// representation that reparses to the same f64).
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let labeled = ds.instances.iter().any(|i| i.gold.is_some());
    let mut out = String::new();
    out.push_str(if labeled {
        "id\tcorpus\tsentence\ttoken\tcomplexity\n"
    } else {
        "id\tcorpus\tsentence\ttoken\n"
    });
    for inst in &ds.instances {
        out.push_str(&inst.id);
        out.push('\t');
        out.push_str(inst.domain.as_str());
        out.push('\t');
        out.push_str(&inst.sentence);
        out.push('\t');
        out.push_str(&inst.target);
        if labeled {
            out.push('\t');
            if let Some(g) = inst.gold {
                out.push_str(&format!("{g}"));
            }
        }
        out.push('\n');
    }
    crate::pipeline::write_atomic(path, out.as_bytes())
}

/// Splits a dataset by domain; partitions are disjoint, preserve input
/// order, and their union is the input.
pub fn partition_by_domain(ds: &Dataset) -> BTreeMap<Domain, Dataset> {
    let mut parts: BTreeMap<Domain, Vec<Instance>> =
        Domain::ALL.iter().map(|d| (*d, Vec::new())).collect();
    for inst in &ds.instances {
        parts.get_mut(&inst.domain).unwrap().push(inst.clone());
    }
    parts
        .into_iter()
        .map(|(d, instances)| {
            (
                d,
                Dataset {
                    subtask: ds.subtask,
                    instances,
                },
            )
        })
        .collect()
}

/// Token counts from a reference corpus. Lookups for absent tokens
/// return 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<String, u64>,
}

impl FrequencyTable {
    pub fn new(counts: BTreeMap<String, u64>) -> Self {
        FrequencyTable { counts }
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Reads a headerless `token<TAB>count` TSV.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let fname = path.display().to_string();
        let mut counts = BTreeMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                continue;
            }
            let row = lineno + 1;
            let (token, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&fname, row, "expected token<TAB>count"))?;
            let count: u64 = count.parse().map_err(|_| {
                Error::parse(&fname, row, format!("unparseable count '{count}'"))
            })?;
            counts.insert(token.to_string(), count);
        }
        Ok(FrequencyTable { counts })
    }

    /// Writes tokens in sorted order so output is deterministic.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut entries: Vec<(&String, &u64)> = self.counts.iter().collect();
        entries.sort();
        let mut out = String::new();
        for (token, count) in entries {
            out.push_str(token);
            out.push('\t');
            out.push_str(&count.to_string());
            out.push('\n');
        }
        crate::pipeline::write_atomic(path.as_ref(), out.as_bytes())
    }
}

/// ln(1 + mean component count) of a target. Components are split on
/// whitespace and lowercased before lookup; unseen tokens count as 0, so
/// the result is always >= 0 and never fails.
pub fn log_frequency(target: &str, table: &FrequencyTable) -> f64 {
    let components: Vec<&str> = target.split_whitespace().collect();
    if components.is_empty() {
        return 0.0;
    }
    let total: f64 = components
        .iter()
        .map(|c| table.count(&c.to_lowercase()) as f64)
        .sum();
    let mean = total / components.len() as f64;
    (1.0 + mean).ln()
}

/// Train-fitted min-max transform mapping a raw feature value into [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
}

/// Fits a min-max normalizer over the given feature values (the training
/// split's values; dev/test values are later clamped into [0,1]).
pub fn fit_normalizer(values: &[f64]) -> Result<Normalizer> {
    if values.is_empty() {
        return Err(Error::invalid("cannot fit a normalizer on no values"));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Normalizer { min, max })
}

/// Applies min-max normalization with clamping. A degenerate normalizer
/// (max == min) maps every input to 0.
pub fn apply_normalizer(n: &Normalizer, v: f64) -> f64 {
    if n.max <= n.min {
        return 0.0;
    }
    ((v - n.min) / (n.max - n.min)).clamp(0.0, 1.0)
}

/// Frequency table plus train-fitted normalizer: everything needed to
/// compute the scalar feature for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatContext {
    pub table: FrequencyTable,
    pub normalizer: Normalizer,
}

impl FeatContext {
    /// Fits the normalizer over the training split's target features.
    pub fn fit(table: FrequencyTable, train: &Dataset) -> Result<Self> {
        let values: Vec<f64> = train
            .instances
            .iter()
            .map(|i| log_frequency(&i.target, &table))
            .collect();
        let normalizer = fit_normalizer(&values)?;
        Ok(FeatContext { table, normalizer })
    }

    pub fn feature(&self, target: &str) -> f64 {
        apply_normalizer(&self.normalizer, log_frequency(target, &self.table))
    }
}
