//! Tweet normalization: URL and mention removal, script filtering, whitespace
//! collapse.
//!
//! The pipeline runs in a fixed order so that the patterns always see intact
//! punctuation:
//!
//! 1. delete URLs ([`DEFAULT_URL_PATTERN`])
//! 2. delete user mentions ([`DEFAULT_MENTION_PATTERN`])
//! 3. delete codepoints outside the allowed blocks ([`DEFAULT_ALLOWED_BLOCKS`])
//! 4. collapse whitespace runs to one space and trim
//!
//! Case is preserved. Hashtags survive because `#` is Basic Latin.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Scheme-prefixed, `www.`-prefixed, or bare `t.co/` links, up to the next whitespace.
pub const DEFAULT_URL_PATTERN: &str = r"(?i)https?://\S+|www\.\S+|\bt\.co/\S*";

/// `@` followed by one or more Unicode word characters.
pub const DEFAULT_MENTION_PATTERN: &str = r"@\w+";

/// Inclusive codepoint ranges kept by [`filter_charset`].
pub const DEFAULT_ALLOWED_BLOCKS: &[(u32, u32)] = &[
    (0x0020, 0x007E),   // Basic Latin, printable
    (0x0900, 0x097F),   // Devanagari
    (0x1F300, 0x1F5FF), // Misc symbols and pictographs
    (0x1F600, 0x1F64F), // Emoticons
    (0x1F680, 0x1F6FF), // Transport and map
    (0x1F900, 0x1F9FF), // Supplemental symbols and pictographs
    (0x2600, 0x26FF),   // Misc symbols
    (0x2700, 0x27BF),   // Dingbats
    (0xFE0F, 0xFE0F),   // Variation selector-16
    (0x200D, 0x200D),   // Zero-width joiner
];

#[derive(Debug, thiserror::Error)]
pub enum PrepError {
    #[error("invalid {field} pattern: {source}")]
    Pattern {
        field: &'static str,
        #[source]
        source: regex::Error,
    },
    #[error("allowed_blocks must include {what}")]
    MissingBlock { what: &'static str },
    #[error("allowed block {lo:#X}-{hi:#X} is reversed")]
    ReversedBlock { lo: u32, hi: u32 },
}

/// Serializable preprocessing settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub url_pattern: String,
    pub mention_pattern: String,
    pub allowed_blocks: Vec<(u32, u32)>,
    pub collapse_whitespace: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            url_pattern: DEFAULT_URL_PATTERN.to_string(),
            mention_pattern: DEFAULT_MENTION_PATTERN.to_string(),
            allowed_blocks: DEFAULT_ALLOWED_BLOCKS.to_vec(),
            collapse_whitespace: true,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<(), PrepError> {
        for &(lo, hi) in &self.allowed_blocks {
            if lo > hi {
                return Err(PrepError::ReversedBlock { lo, hi });
            }
        }
        let covers = |lo: u32, hi: u32| {
            (lo..=hi).all(|cp| self.allowed_blocks.iter().any(|&(a, b)| a <= cp && cp <= b))
        };
        if !covers(0x20, 0x7E) {
            return Err(PrepError::MissingBlock {
                what: "Basic Latin printable (U+0020-U+007E)",
            });
        }
        if !covers(0x900, 0x97F) {
            return Err(PrepError::MissingBlock {
                what: "Devanagari (U+0900-U+097F)",
            });
        }
        Ok(())
    }
}

/// Compiled form of a [`PrepConfig`].
#[derive(Debug, Clone)]
pub struct Preprocessor {
    url: Regex,
    mention: Regex,
    blocks: Vec<(u32, u32)>,
}

impl Preprocessor {
    pub fn new(config: &PrepConfig) -> Result<Self, PrepError> {
        config.validate()?;
        let url = Regex::new(&config.url_pattern).map_err(|source| PrepError::Pattern {
            field: "url",
            source,
        })?;
        let mention =
            Regex::new(&config.mention_pattern).map_err(|source| PrepError::Pattern {
                field: "mention",
                source,
            })?;
        let mut blocks = config.allowed_blocks.clone();
        blocks.sort_unstable();
        Ok(Preprocessor {
            url,
            mention,
            blocks,
        })
    }

    pub fn strip_urls(&self, text: &str) -> String {
        self.url.replace_all(text, "").into_owned()
    }

    pub fn strip_mentions(&self, text: &str) -> String {
        self.mention.replace_all(text, "").into_owned()
    }

    pub fn is_allowed(&self, c: char) -> bool {
        let cp = c as u32;
        self.blocks.iter().any(|&(lo, hi)| lo <= cp && cp <= hi)
    }

    /// Deletes every codepoint outside the allowed blocks. Whitespace is kept
    /// here and normalized by the collapse step.
    pub fn filter_charset(&self, text: &str) -> String {
        text.chars()
            .filter(|&c| c.is_whitespace() || self.is_allowed(c))
            .collect()
    }

    fn single_pass(&self, text: &str) -> String {
        let text = self.strip_urls(text);
        let text = self.strip_mentions(&text);
        let text = self.filter_charset(&text);
        collapse_whitespace(&text)
    }

    /// Full pipeline. Re-applied until nothing changes, because deleting a
    /// stray codepoint can splice together a new URL or mention
    /// (`"@\u{1}user"` becomes `"@user"`); every pass shrinks or fixes the text
    /// so the loop terminates.
    pub fn preprocess(&self, text: &str) -> String {
        let mut current = self.single_pass(text);
        loop {
            let next = self.single_pass(&current);
            if next == current {
                return current;
            }
            current = next;
        }
    }
}

impl Default for Preprocessor {
    fn default() -> Self {
        DEFAULT.clone()
    }
}

static DEFAULT: LazyLock<Preprocessor> =
    LazyLock::new(|| Preprocessor::new(&PrepConfig::default()).expect("default config is valid"));

pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn strip_urls(text: &str) -> String {
    DEFAULT.strip_urls(text)
}

pub fn strip_mentions(text: &str) -> String {
    DEFAULT.strip_mentions(text)
}

pub fn filter_charset(text: &str) -> String {
    DEFAULT.filter_charset(text)
}

/// [`Preprocessor::preprocess`] with the default configuration.
pub fn preprocess(text: &str) -> String {
    DEFAULT.preprocess(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn url_examples() {
        assert_eq!(strip_urls("see https://t.co/abc now"), "see  now");
        assert_eq!(strip_urls("no links here"), "no links here");
        assert_eq!(strip_urls("www.example.com/x?y=1 end"), " end");
        assert_eq!(strip_urls("bare t.co/Xy12 link"), "bare  link");
        assert_eq!(strip_urls("HTTP://SHOUT.IN x"), " x");
    }

    #[test]
    fn mention_examples() {
        assert_eq!(strip_mentions("@user hello"), " hello");
        assert_eq!(strip_mentions("email a@b stays? "), "email a stays? ");
        assert_eq!(strip_mentions("hello"), "hello");
    }

    #[test]
    fn charset_examples() {
        assert_eq!(
            filter_charset("vaccine insano k liye hain"),
            "vaccine insano k liye hain"
        );
        assert_eq!(filter_charset("नमस्ते hello 🙏"), "नमस्ते hello 🙏");
        assert_eq!(filter_charset("hello\u{1}world привет"), "helloworld ");
    }

    #[test]
    fn pipeline_examples() {
        assert_eq!(
            preprocess("@user INDIA NEEDS VACCINES https://t.co/x"),
            "INDIA NEEDS VACCINES"
        );
        assert_eq!(preprocess("#ResignModi 😡"), "#ResignModi 😡");
        assert_eq!(preprocess(""), "");
        assert_eq!(preprocess("   \t\n "), "");
    }

    #[test]
    fn spliced_mention_is_removed() {
        assert_eq!(preprocess("hi @\u{1}user there"), "hi there");
        assert_eq!(preprocess("go ww\u{1}w.example.com now"), "go now");
    }

    #[test]
    fn config_must_keep_latin_and_devanagari() {
        let mut config = PrepConfig::default();
        config.allowed_blocks.retain(|&(lo, _)| lo != 0x0900);
        assert!(matches!(
            Preprocessor::new(&config),
            Err(PrepError::MissingBlock { .. })
        ));
        let config = PrepConfig {
            url_pattern: "(".into(),
            ..PrepConfig::default()
        };
        assert!(matches!(
            Preprocessor::new(&config),
            Err(PrepError::Pattern { field: "url", .. })
        ));
    }

    fn messy_text() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            Just("https://".to_string()),
            Just("www.".to_string()),
            Just("t.co/".to_string()),
            Just("@".to_string()),
            Just("#".to_string()),
            Just(" ".to_string()),
            Just("\t".to_string()),
            Just("\u{1}".to_string()),
            Just("w".to_string()),
            "[a-zA-Z0-9.:/?=]{1,6}",
            "[\u{0900}-\u{097F}]{1,4}",
            "[\u{0400}-\u{04FF}]{1,3}",
            "[\u{1F600}-\u{1F64F}]",
            any::<char>().prop_map(|c| c.to_string()),
        ];
        proptest::collection::vec(piece, 0..24).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn idempotent(text in messy_text()) {
            let once = preprocess(&text);
            prop_assert_eq!(preprocess(&once), once);
        }

        #[test]
        fn output_alphabet_is_closed(text in messy_text()) {
            let out = preprocess(&text);
            let prep = Preprocessor::default();
            prop_assert!(out.chars().all(|c| c == ' ' || (prep.is_allowed(c) && !c.is_whitespace())));
        }

        #[test]
        fn never_grows(text in messy_text()) {
            prop_assert!(preprocess(&text).chars().count() <= text.chars().count());
        }
    }
}
