//! Synthetic code-mixed threads with planted offensive words.
//!
//! Labels are drawn first (an exact HOF count for the requested balance) and
//! text is generated to match:
//!
//! * a HOF node either contains at least one planted lexicon word, or is an
//!   agreement response (cue words only) whose parent is HOF;
//! * a NOT node never contains a lexicon word; it may be an agreement response
//!   when nothing above it in the thread is HOF.
//!
//! Agreement responses are the context-dependent cases: their own text is the
//! same in both classes and only the parent decides the label.

use serde::{Deserialize, Serialize};

use super::{CorpusError, Label, Level, ThreadNode};
use crate::rng::SplitMix64;

/// Neutral Roman-script and Devanagari words.
pub const DEFAULT_VOCAB_POOL: &[&str] = &[
    "aaj", "kal", "desh", "log", "sarkar", "vaccine", "doctor", "hospital", "news", "match",
    "cricket", "team", "khana", "paani", "school", "kaam", "ghar", "sheher", "gaon", "train",
    "bus", "road", "barish", "mausam", "garmi", "thand", "film", "gaana", "dost", "family",
    "market", "price", "petrol", "election", "vote", "neta", "policy", "india", "modi", "delhi",
    "mumbai", "bharat", "today", "people", "need", "help", "time", "good", "day", "work",
    "please", "thanks", "video", "photo", "update", "report", "nahi", "kya", "kyun", "kaise",
    "bahut", "accha", "theek", "abhi", "phir", "sab", "koi", "yeh", "woh", "hum",
    "देश", "लोग", "सरकार", "खबर", "आज", "कल", "पानी", "घर", "काम", "दोस्त",
    "भारत", "चुनाव", "मौसम", "बारिश", "अस्पताल", "टीका", "समय", "लोगों",
];

/// Small bundled list of mild insults used by tests and demos.
pub const DEMO_LEXICON: &[&str] = &[
    "idiot", "moron", "stupid", "bewakoof", "gadha", "kameena", "ullu", "nalayak", "jahil",
    "बेवकूफ", "गधा", "कमीना", "नालायक",
];

/// Words that signal agreement with the parent message.
pub const DEFAULT_AGREEMENT_CUES: &[&str] = &[
    "sahi", "bilkul", "haan", "exactly", "agreed", "correct", "sach", "सही", "बिल्कुल", "हाँ",
];

const EMOJIS: &[&str] = &["😡", "🙏", "😂", "🔥", "👍", "💯", "😢"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_threads: usize,
    pub profane_lexicon: Vec<String>,
    /// Fraction of nodes labelled HOF.
    pub class_balance: f64,
    pub vocab_pool: Vec<String>,
    pub seed: u64,
    pub min_comments: usize,
    pub max_comments: usize,
    /// Probability that a comment receives a reply.
    pub reply_rate: f64,
    /// Probability that a response (comment or reply) is an agreement
    /// response, when the thread allows one.
    pub agreement_rate: f64,
    /// Probability that a response copies its parent's label instead of
    /// drawing a fresh one.
    pub parent_label_rate: f64,
    pub agreement_cues: Vec<String>,
    /// Probability of adding mentions, links, hashtags and emoji to raw text.
    pub noise_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let owned = |words: &[&str]| words.iter().map(|w| w.to_string()).collect();
        SyntheticConfig {
            n_threads: 100,
            profane_lexicon: owned(DEMO_LEXICON),
            class_balance: 0.5,
            vocab_pool: owned(DEFAULT_VOCAB_POOL),
            seed: 0,
            min_comments: 1,
            max_comments: 3,
            reply_rate: 0.5,
            agreement_rate: 0.3,
            parent_label_rate: 0.9,
            agreement_cues: owned(DEFAULT_AGREEMENT_CUES),
            noise_rate: 0.15,
        }
    }
}

fn is_devanagari(word: &str) -> bool {
    word.chars().any(|c| ('\u{0900}'..='\u{097F}').contains(&c))
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |msg: String| Err(CorpusError::SyntheticConfig(msg));
        if !(0.0..=1.0).contains(&self.class_balance) {
            return fail(format!("class_balance {} outside [0, 1]", self.class_balance));
        }
        for (name, rate) in [
            ("reply_rate", self.reply_rate),
            ("agreement_rate", self.agreement_rate),
            ("parent_label_rate", self.parent_label_rate),
            ("noise_rate", self.noise_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return fail(format!("{name} {rate} outside [0, 1]"));
            }
        }
        if self.min_comments > self.max_comments {
            return fail("min_comments exceeds max_comments".into());
        }
        if self.class_balance > 0.0 && self.profane_lexicon.is_empty() {
            return fail("HOF samples requested but the lexicon is empty".into());
        }
        if self.vocab_pool.is_empty() {
            return fail("vocab_pool is empty".into());
        }
        if !self.vocab_pool.iter().any(|w| is_devanagari(w))
            || !self.vocab_pool.iter().any(|w| !is_devanagari(w))
        {
            return fail("vocab_pool needs both Roman and Devanagari words".into());
        }
        let lexicon: std::collections::HashSet<String> =
            self.profane_lexicon.iter().map(|w| w.to_lowercase()).collect();
        let lowered = |words: &[String]| -> Option<String> {
            words.iter().find(|w| lexicon.contains(&w.to_lowercase())).cloned()
        };
        if let Some(word) = lowered(&self.vocab_pool) {
            return fail(format!("{word:?} is in both the lexicon and vocab_pool"));
        }
        if let Some(word) = lowered(&self.agreement_cues) {
            return fail(format!("{word:?} is in both the lexicon and agreement_cues"));
        }
        for word in self
            .profane_lexicon
            .iter()
            .chain(&self.vocab_pool)
            .chain(&self.agreement_cues)
        {
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return fail(format!("word {word:?} is empty or contains whitespace"));
            }
        }
        Ok(())
    }
}

struct Slot {
    id: String,
    level: Level,
    parent: Option<usize>,
}

struct Generator<'a> {
    config: &'a SyntheticConfig,
    rng: SplitMix64,
}

impl Generator<'_> {
    fn words(&mut self, lo: usize, hi: usize) -> Vec<String> {
        let n = lo + self.rng.below(hi - lo + 1);
        (0..n)
            .map(|_| self.rng.choose(&self.config.vocab_pool).unwrap().clone())
            .collect()
    }

    fn length_range(level: Level) -> (usize, usize) {
        match level {
            Level::Tweet => (6, 12),
            Level::Comment => (4, 9),
            Level::Reply => (2, 6),
        }
    }

    fn neutral(&mut self, level: Level) -> Vec<String> {
        let (lo, hi) = Self::length_range(level);
        self.words(lo, hi)
    }

    fn planted(&mut self, level: Level) -> Vec<String> {
        let mut words = self.neutral(level);
        let count = if self.rng.next_f64() < 0.25 { 2 } else { 1 };
        for _ in 0..count {
            let word = self.rng.choose(&self.config.profane_lexicon).unwrap().clone();
            let at = self.rng.below(words.len() + 1);
            words.insert(at, word);
        }
        words
    }

    fn agreement(&mut self) -> Vec<String> {
        let mut words = self.words(0, 2);
        let cues = 1 + self.rng.below(2);
        for _ in 0..cues {
            let cue = self.rng.choose(&self.config.agreement_cues).unwrap().clone();
            let at = self.rng.below(words.len() + 1);
            words.insert(at, cue);
        }
        words
    }

    fn decorate(&mut self, words: Vec<String>, serial: usize) -> String {
        let noise = self.config.noise_rate;
        let mut parts = Vec::with_capacity(words.len() + 3);
        if self.rng.next_f64() < noise {
            parts.push(format!("@user{}", self.rng.below(1000)));
        }
        parts.extend(words);
        if self.rng.next_f64() < noise {
            let tag = self.rng.choose(&self.config.vocab_pool).unwrap().clone();
            parts.push(format!("#{tag}"));
        }
        if self.rng.next_f64() < noise {
            parts.push(self.rng.choose(EMOJIS).unwrap().to_string());
        }
        if self.rng.next_f64() < noise {
            parts.push(format!("https://t.co/x{serial:04}"));
        }
        parts.join(" ")
    }
}

/// Generates `n_threads` threads, deterministically per seed.
pub fn gen_synthetic(config: &SyntheticConfig) -> Result<Vec<ThreadNode>, CorpusError> {
    config.validate()?;
    let mut gen = Generator {
        config,
        rng: SplitMix64::derived(config.seed, 0x5e7),
    };

    let mut slots: Vec<Slot> = Vec::new();
    for t in 0..config.n_threads {
        let tweet = slots.len();
        slots.push(Slot {
            id: format!("t{t}"),
            level: Level::Tweet,
            parent: None,
        });
        let spread = config.max_comments - config.min_comments + 1;
        let comments = config.min_comments + gen.rng.below(spread);
        for c in 0..comments {
            let comment = slots.len();
            slots.push(Slot {
                id: format!("t{t}c{c}"),
                level: Level::Comment,
                parent: Some(tweet),
            });
            if gen.rng.next_f64() < config.reply_rate {
                slots.push(Slot {
                    id: format!("t{t}c{c}r"),
                    level: Level::Reply,
                    parent: Some(comment),
                });
            }
        }
    }

    // Slots are in thread order, so parents are labelled before children.
    let n = slots.len();
    let mut labels = vec![Label::Not; n];
    for (i, slot) in slots.iter().enumerate() {
        labels[i] = match slot.parent {
            Some(p) if gen.rng.next_f64() < config.parent_label_rate => labels[p],
            _ if gen.rng.next_f64() < config.class_balance => Label::Hof,
            _ => Label::Not,
        };
    }
    // Flip labels in random order until the HOF count is exact.
    let n_hof = (config.class_balance * n as f64).round() as usize;
    let mut count = labels.iter().filter(|&&l| l == Label::Hof).count();
    let mut order: Vec<usize> = (0..n).collect();
    gen.rng.shuffle(&mut order);
    for i in order {
        if count == n_hof {
            break;
        }
        match labels[i] {
            Label::Not if count < n_hof => {
                labels[i] = Label::Hof;
                count += 1;
            }
            Label::Hof if count > n_hof => {
                labels[i] = Label::Not;
                count -= 1;
            }
            _ => {}
        }
    }

    let mut nodes = Vec::with_capacity(n);
    for (i, slot) in slots.iter().enumerate() {
        let label = labels[i];
        let parent_hof = slot.parent.map(|p| labels[p] == Label::Hof);
        let chain_clean = {
            let mut clean = true;
            let mut cursor = slot.parent;
            while let Some(p) = cursor {
                clean &= labels[p] == Label::Not;
                cursor = slots[p].parent;
            }
            clean
        };
        let wants_agreement = slot.parent.is_some() && gen.rng.next_f64() < config.agreement_rate;
        let words = match label {
            Label::Hof if wants_agreement && parent_hof == Some(true) => gen.agreement(),
            Label::Hof => gen.planted(slot.level),
            Label::Not if wants_agreement && chain_clean => gen.agreement(),
            Label::Not => gen.neutral(slot.level),
        };
        nodes.push(ThreadNode {
            id: slot.id.clone(),
            level: slot.level,
            parent_id: slot.parent.map(|p| slots[p].id.clone()),
            text: gen.decorate(words, i),
            label,
        });
    }
    Ok(nodes)
}
