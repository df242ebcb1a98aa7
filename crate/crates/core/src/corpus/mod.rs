//! Conversation threads and the flattened `(context, target, label)` samples
//! the classifiers train on.
//!
//! A thread is a tweet, its comments, and the replies to those comments. A
//! comment's context is its tweet; a reply's context is the tweet and the
//! comment joined by one space. Context strings are assembled from raw text
//! and normalized once afterwards.

mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::textprep::Preprocessor;

pub use synthetic::{
    gen_synthetic, SyntheticConfig, DEFAULT_AGREEMENT_CUES, DEFAULT_VOCAB_POOL, DEMO_LEXICON,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label {label:?} (expected NOT or HOF)")]
    UnknownLabel { line: usize, label: String },
    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },
    #[error("node {id:?} references missing parent {parent_id:?}")]
    DanglingParent { id: String, parent_id: String },
    #[error("node {id:?}: {message}")]
    Hierarchy { id: String, message: String },
    #[error("cannot split {n} sample(s); at least 2 are required")]
    SplitImpossible { n: usize },
    #[error("val_fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("synthetic config: {0}")]
    SyntheticConfig(String),
}

/// Binary class, `NOT` = 0 and `HOF` = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "NOT")]
    Not,
    #[serde(rename = "HOF")]
    Hof,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Not, Label::Hof];

    pub fn index(self) -> usize {
        match self {
            Label::Not => 0,
            Label::Hof => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::Not),
            1 => Some(Label::Hof),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Not => "NOT",
            Label::Hof => "HOF",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NOT" => Ok(Label::Not),
            "HOF" => Ok(Label::Hof),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Tweet,
    Comment,
    Reply,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Tweet => "tweet",
            Level::Comment => "comment",
            Level::Reply => "reply",
        }
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tweet" => Ok(Level::Tweet),
            "comment" => Ok(Level::Comment),
            "reply" => Ok(Level::Reply),
            other => Err(format!("unknown level {other:?}")),
        }
    }
}

/// One raw record of a conversation thread.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadNode {
    pub id: String,
    pub level: Level,
    pub parent_id: Option<String>,
    pub text: String,
    pub label: Label,
}

/// A flattened, preprocessed training instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub target_text: String,
    pub context_text: Option<String>,
    pub label: Label,
    pub is_contextual: bool,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        target_text: impl Into<String>,
        context_text: Option<String>,
        label: Label,
    ) -> Self {
        let is_contextual = context_text.is_some();
        Sample {
            id: id.into(),
            target_text: target_text.into(),
            context_text,
            label,
            is_contextual,
        }
    }

    /// The same sample with its context dropped (the no-context ablation).
    pub fn without_context(&self) -> Sample {
        Sample::new(self.id.clone(), self.target_text.clone(), None, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreadFormat {
    Jsonl,
    Tsv,
}

impl ThreadFormat {
    /// Picks TSV for `.tsv` files and JSON-lines otherwise.
    pub fn from_path(path: &Path) -> ThreadFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => ThreadFormat::Tsv,
            _ => ThreadFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    level: Level,
    #[serde(default)]
    parent_id: Option<String>,
    text: String,
    label: String,
}

fn parse_label(line: usize, label: &str) -> Result<Label, CorpusError> {
    label.parse().map_err(|label| CorpusError::UnknownLabel { line, label })
}

fn parse_jsonl_line(line_no: usize, line: &str) -> Result<ThreadNode, CorpusError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(ThreadNode {
        label: parse_label(line_no, &raw.label)?,
        id: raw.id,
        level: raw.level,
        parent_id: raw.parent_id,
        text: raw.text,
    })
}

fn parse_tsv_line(line_no: usize, line: &str) -> Result<ThreadNode, CorpusError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(CorpusError::Parse {
            line: line_no,
            message: format!("expected 5 tab-separated fields, found {}", fields.len()),
        });
    }
    let level = fields[1].parse().map_err(|message| CorpusError::Parse {
        line: line_no,
        message,
    })?;
    Ok(ThreadNode {
        id: fields[0].to_string(),
        level,
        parent_id: (!fields[2].is_empty()).then(|| fields[2].to_string()),
        text: fields[3].to_string(),
        label: parse_label(line_no, fields[4])?,
    })
}

/// Parses thread records from text. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_threads(content: &str, format: ThreadFormat) -> Result<Vec<ThreadNode>, CorpusError> {
    let mut nodes = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let node = match format {
            ThreadFormat::Jsonl => parse_jsonl_line(i + 1, line)?,
            ThreadFormat::Tsv => parse_tsv_line(i + 1, line.trim_end_matches('\r'))?,
        };
        nodes.push(node);
    }
    validate_threads(&nodes)?;
    Ok(nodes)
}

/// Reads and validates a thread file, preserving file order.
pub fn load_threads(path: &Path, format: ThreadFormat) -> Result<Vec<ThreadNode>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let content = std::fs::read_to_string(path).map_err(io_err)?;
    parse_threads(&content, format)
}

pub fn write_threads(path: &Path, nodes: &[ThreadNode]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = File::create(path).map_err(io_err)?;
    file.write_all(threads_to_jsonl(nodes).as_bytes())
        .map_err(io_err)
}

pub fn threads_to_jsonl(nodes: &[ThreadNode]) -> String {
    let mut out = String::new();
    for node in nodes {
        out.push_str(&serde_json::to_string(node).expect("thread nodes serialize"));
        out.push('\n');
    }
    out
}

/// Checks id uniqueness, parent resolution and the tweet/comment/reply nesting.
pub fn validate_threads(nodes: &[ThreadNode]) -> Result<(), CorpusError> {
    let mut by_id: HashMap<&str, &ThreadNode> = HashMap::with_capacity(nodes.len());
    for node in nodes {
        if by_id.insert(node.id.as_str(), node).is_some() {
            return Err(CorpusError::DuplicateId {
                id: node.id.clone(),
            });
        }
    }
    for node in nodes {
        let hierarchy = |message: &str| CorpusError::Hierarchy {
            id: node.id.clone(),
            message: message.to_string(),
        };
        match (&node.level, &node.parent_id) {
            (Level::Tweet, None) => {}
            (Level::Tweet, Some(_)) => return Err(hierarchy("a tweet cannot have a parent")),
            (_, None) => return Err(hierarchy("comments and replies need a parent_id")),
            (level, Some(parent_id)) => {
                let parent =
                    by_id
                        .get(parent_id.as_str())
                        .ok_or_else(|| CorpusError::DanglingParent {
                            id: node.id.clone(),
                            parent_id: parent_id.clone(),
                        })?;
                let expected = match level {
                    Level::Comment => Level::Tweet,
                    _ => Level::Comment,
                };
                if parent.level != expected {
                    return Err(hierarchy(&format!(
                        "a {} must hang off a {}, not a {}",
                        level.as_str(),
                        expected.as_str(),
                        parent.level.as_str()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// [`build_samples_with`] using the default preprocessor.
pub fn build_samples(nodes: &[ThreadNode]) -> Result<Vec<Sample>, CorpusError> {
    build_samples_with(nodes, &Preprocessor::default())
}

/// One sample per node, in node order.
pub fn build_samples_with(
    nodes: &[ThreadNode],
    prep: &Preprocessor,
) -> Result<Vec<Sample>, CorpusError> {
    validate_threads(nodes)?;
    let by_id: HashMap<&str, &ThreadNode> = nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    let parent = |node: &ThreadNode| -> &ThreadNode {
        // validated above
        by_id[node.parent_id.as_deref().unwrap()]
    };
    Ok(nodes
        .iter()
        .map(|node| {
            let raw_context = match node.level {
                Level::Tweet => None,
                Level::Comment => Some(parent(node).text.clone()),
                Level::Reply => {
                    let comment = parent(node);
                    let tweet = parent(comment);
                    Some(format!("{} {}", tweet.text, comment.text))
                }
            };
            Sample::new(
                node.id.clone(),
                prep.preprocess(&node.text),
                raw_context.map(|c| prep.preprocess(&c)),
                node.label,
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub seed: u64,
    pub val_fraction: f64,
    /// Split each class separately so both partitions keep the class ratio.
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            val_fraction: 0.1,
            stratified: false,
        }
    }
}

/// Random train/validation partition.
///
/// The validation set takes `round(val_fraction * n)` samples, clamped to
/// `[1, n - 1]` so that neither side is empty. Both outputs keep input order.
pub fn split_train_val(
    samples: &[Sample],
    spec: &SplitSpec,
) -> Result<(Vec<Sample>, Vec<Sample>), CorpusError> {
    if !(spec.val_fraction > 0.0 && spec.val_fraction < 1.0) {
        return Err(CorpusError::BadFraction(spec.val_fraction));
    }
    let n = samples.len();
    if n < 2 {
        return Err(CorpusError::SplitImpossible { n });
    }
    let mut rng = SplitMix64::derived(spec.seed, 0x5917);
    let val_count = |pool: usize| {
        ((spec.val_fraction * pool as f64).round() as usize).clamp(1.min(pool), pool.saturating_sub(1))
    };
    let mut in_val = vec![false; n];
    if spec.stratified {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 2];
        for (i, s) in samples.iter().enumerate() {
            groups[s.label.index()].push(i);
        }
        for mut group in groups {
            rng.shuffle(&mut group);
            let take = ((spec.val_fraction * group.len() as f64).round() as usize).min(group.len());
            for &i in &group[..take] {
                in_val[i] = true;
            }
        }
        // keep both partitions non-empty
        let k = in_val.iter().filter(|&&v| v).count();
        if k == 0 {
            in_val[0] = true;
        } else if k == n {
            in_val[0] = false;
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        for &i in &order[..val_count(n)] {
            in_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (sample, v) in samples.iter().zip(in_val) {
        if v {
            val.push(sample.clone());
        } else {
            train.push(sample.clone());
        }
    }
    Ok((train, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_words: usize,
    pub max_words_per_sample: usize,
    pub avg_words_per_sample: f64,
    pub unique_tokens: usize,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Total words      {}", self.total_words)?;
        writeln!(f, "Max words/sample {}", self.max_words_per_sample)?;
        writeln!(f, "Avg word count   {:.2}", self.avg_words_per_sample)?;
        write!(f, "Unique tokens    {}", self.unique_tokens)
    }
}

/// Word statistics over target texts. A word is a whitespace-separated unit;
/// uniqueness is case-sensitive.
pub fn corpus_stats(samples: &[Sample]) -> CorpusStats {
    let mut total = 0;
    let mut max = 0;
    let mut unique: HashSet<&str> = HashSet::new();
    for sample in samples {
        let mut count = 0;
        for word in sample.target_text.split_whitespace() {
            unique.insert(word);
            count += 1;
        }
        total += count;
        max = max.max(count);
    }
    CorpusStats {
        total_words: total,
        max_words_per_sample: max,
        avg_words_per_sample: if samples.is_empty() {
            0.0
        } else {
            total as f64 / samples.len() as f64
        },
        unique_tokens: unique.len(),
    }
}
