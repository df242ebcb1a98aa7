use std::collections::BTreeSet;
use std::path::Path;

use super::{ClassifyError, Prediction, Predictor, Source};
use crate::corpus::{Label, Sample, DEMO_LEXICON};

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: lexicon entry {word:?} contains whitespace")]
    Whitespace { line: usize, word: String },
}

/// Set of lowercase profane words, matched token-exactly against target text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    words: BTreeSet<String>,
}

impl Lexicon {
    pub fn from_words<I, S>(words: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for (i, word) in words.into_iter().enumerate() {
            let word = word.as_ref().trim();
            if word.is_empty() {
                continue;
            }
            if word.chars().any(char::is_whitespace) {
                return Err(LexiconError::Whitespace {
                    line: i + 1,
                    word: word.to_string(),
                });
            }
            set.insert(word.to_lowercase());
        }
        Ok(Lexicon { words: set })
    }

    /// One word per line; blank lines and `#` lines are skipped.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut set = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let word = line.trim();
            if word.is_empty() || word.starts_with('#') {
                continue;
            }
            if word.chars().any(char::is_whitespace) {
                return Err(LexiconError::Whitespace {
                    line: i + 1,
                    word: word.to_string(),
                });
            }
            set.insert(word.to_lowercase());
        }
        Ok(Lexicon { words: set })
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The small bundled list used by the synthetic corpus and tests.
    pub fn demo() -> Self {
        Self::from_words(DEMO_LEXICON).expect("demo lexicon has no whitespace")
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// True when any whitespace token of `text` (lowercased, leading `#`
    /// removed) is in the lexicon.
    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        lower
            .split_whitespace()
            .any(|token| self.words.contains(token.trim_start_matches('#')))
    }
}

/// HOF with probabilities `[0, 1]` when the target hits the lexicon.
pub fn lexicon_classify(lexicon: &Lexicon, sample: &Sample) -> Option<Prediction> {
    lexicon.matches(&sample.target_text).then_some(Prediction {
        probs: [0.0, 1.0],
        label: Label::Hof,
        source: Source::Lexicon,
    })
}

/// Lexicon override first, model otherwise.
pub fn combined_predict<P: Predictor + ?Sized>(
    model: &P,
    lexicon: Option<&Lexicon>,
    sample: &Sample,
) -> Result<Prediction, ClassifyError> {
    if let Some(hit) = lexicon.and_then(|lex| lexicon_classify(lex, sample)) {
        return Ok(hit);
    }
    model.predict(sample)
}

/// A predictor wrapped with an optional lexicon override.
#[derive(Debug, Clone)]
pub struct Combined<P> {
    pub model: P,
    pub lexicon: Option<Lexicon>,
}

impl<P: Predictor> Predictor for Combined<P> {
    fn predict(&self, sample: &Sample) -> Result<Prediction, ClassifyError> {
        combined_predict(&self.model, self.lexicon.as_ref(), sample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Fixed([f64; 2]);

    impl Predictor for Fixed {
        fn predict(&self, _: &Sample) -> Result<Prediction, ClassifyError> {
            Ok(Prediction::from_probs(self.0, Source::Model))
        }
    }

    fn target(text: &str) -> Sample {
        Sample::new("s", text, None, Label::Not)
    }

    #[test]
    fn token_exact_matching() {
        let idiot = Lexicon::from_words(["idiot"]).unwrap();
        assert_eq!(lexicon_classify(&idiot, &target("you idiot")).unwrap().label, Label::Hof);
        assert!(lexicon_classify(&idiot, &target("idiotic debate")).is_none());
        assert!(lexicon_classify(&idiot, &target("you IDIOT")).is_some());
        let moron = Lexicon::from_words(["moron"]).unwrap();
        let hit = lexicon_classify(&moron, &target("#moron indeed")).unwrap();
        assert_eq!(hit.probs, [0.0, 1.0]);
        assert_eq!(hit.source, Source::Lexicon);
    }

    #[test]
    fn context_is_not_scanned() {
        let lex = Lexicon::from_words(["idiot"]).unwrap();
        let sample = Sample::new("s", "fine", Some("you idiot".into()), Label::Not);
        assert!(lexicon_classify(&lex, &sample).is_none());
    }

    #[test]
    fn parse_file_format() {
        let lex = Lexicon::parse("# demo\nIdiot\n\nidiot\n  bewakoof  \n").unwrap();
        assert_eq!(lex.words().collect::<Vec<_>>(), vec!["bewakoof", "idiot"]);
        assert!(matches!(
            Lexicon::parse("ok\ntwo words\n"),
            Err(LexiconError::Whitespace { line: 2, .. })
        ));
    }

    #[test]
    fn override_precedence() {
        let lex = Lexicon::from_words(["idiot"]).unwrap();
        let model = Fixed([0.9, 0.1]);
        let hit = combined_predict(&model, Some(&lex), &target("you idiot")).unwrap();
        assert_eq!(hit.label, Label::Hof);
        let miss = combined_predict(&model, Some(&lex), &target("hello")).unwrap();
        assert_eq!(miss, model.predict(&target("hello")).unwrap());
        let none = combined_predict(&model, None, &target("you idiot")).unwrap();
        assert_eq!(none.label, Label::Not);
    }

    proptest! {
        #[test]
        fn appending_a_lexicon_word_never_clears_hof(
            words in proptest::collection::vec("[a-z]{1,6}", 0..8),
            p_hof in 0.0f64..=1.0,
        ) {
            let lex = Lexicon::demo();
            let model = Fixed([1.0 - p_hof, p_hof]);
            let text = words.join(" ");
            let before = combined_predict(&model, Some(&lex), &target(&text)).unwrap();
            let bad = lex.words().next().unwrap();
            let after = combined_predict(&model, Some(&lex), &target(&format!("{text} {bad}"))).unwrap();
            prop_assert_eq!(after.label, Label::Hof);
            if before.label == Label::Hof {
                prop_assert_eq!(after.label, Label::Hof);
            }
        }
    }
}
