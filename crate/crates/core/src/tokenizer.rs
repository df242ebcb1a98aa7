//! WordPiece-style subword vocabulary and `[CLS]`/`[SEP]` framed encodings.
//!
//! The vocabulary is built by frequency rather than by likelihood-trained
//! merges: specials, then every codepoint of the corpus alphabet both as a
//! word-initial piece and as a `##` continuation, then whole words, word
//! prefixes and `##` word-internal fragments ranked by how often they occur
//! (ties broken lexicographically). Because the alphabet is always covered,
//! in-corpus text never produces `[UNK]`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];
pub const CONTINUATION: &str = "##";

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("target size {target} cannot hold the {required} specials and alphabet pieces")]
    VocabTooSmall { target: usize, required: usize },
    #[error("max_len {max_len} is below the minimum of {min}")]
    MaxLenTooSmall { max_len: usize, min: usize },
    #[error("token id {id} is out of range for a vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("vocab file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from an explicit token list; the first four entries
    /// must be the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s)
        {
            return Err(format!("the first tokens must be {SPECIAL_TOKENS:?}"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(format!("token {id} ({token:?}) is empty or contains whitespace"));
            }
            if index.insert(token.clone(), id as u32).is_some() {
                return Err(format!("duplicate token {token:?}"));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    fn piece_id(&self, piece: &str) -> Option<u32> {
        self.id(piece).filter(|&id| id as usize >= SPECIAL_TOKENS.len())
    }

    /// One token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        Vocab::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_text()).map_err(|e| TokenizerError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let file_err = |message: String| TokenizerError::File {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        Vocab::from_text(&text).map_err(file_err)
    }
}

/// Frequency-ranked vocabulary of at most `target_size` tokens.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], target_size: usize) -> Result<Vocab, TokenizerError> {
    let mut word_counts: HashMap<&str, u64> = HashMap::new();
    for text in texts {
        for word in text.as_ref().split_whitespace() {
            *word_counts.entry(word).or_default() += 1;
        }
    }
    let alphabet: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    let required = SPECIAL_TOKENS.len() + 2 * alphabet.len();
    if target_size < required {
        return Err(TokenizerError::VocabTooSmall {
            target: target_size,
            required,
        });
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    tokens.extend(alphabet.iter().map(|c| format!("{CONTINUATION}{c}")));

    let mut candidates: HashMap<String, u64> = HashMap::new();
    for (word, &count) in &word_counts {
        let chars: Vec<char> = word.chars().collect();
        let n = chars.len();
        for end in 2..=n {
            *candidates.entry(chars[..end].iter().collect()).or_default() += count;
        }
        for start in 1..n {
            for end in start + 2..=n {
                let piece: String = chars[start..end].iter().collect();
                *candidates
                    .entry(format!("{CONTINUATION}{piece}"))
                    .or_default() += count;
            }
        }
    }
    for special in SPECIAL_TOKENS {
        candidates.remove(special);
    }
    let mut ranked: Vec<(String, u64)> = candidates.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let room = target_size - tokens.len();
    tokens.extend(ranked.into_iter().take(room).map(|(t, _)| t));

    Ok(Vocab::from_tokens(tokens).expect("constructed vocab is well formed"))
}

/// Greedy longest-match WordPiece over whitespace-separated words. A codepoint
/// with no matching piece becomes `[UNK]` and matching resumes after it.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<String> {
    tokenize_ids(text, vocab)
        .into_iter()
        .map(|id| vocab.tokens[id as usize].clone())
        .collect()
}

pub fn tokenize_ids(text: &str, vocab: &Vocab) -> Vec<u32> {
    let mut ids = Vec::new();
    let mut piece = String::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        while start < chars.len() {
            let mut matched = None;
            for end in (start + 1..=chars.len()).rev() {
                piece.clear();
                if start > 0 {
                    piece.push_str(CONTINUATION);
                }
                piece.extend(&chars[start..end]);
                if let Some(id) = vocab.piece_id(&piece) {
                    matched = Some((id, end));
                    break;
                }
            }
            match matched {
                Some((id, end)) => {
                    ids.push(id);
                    start = end;
                }
                None => {
                    ids.push(UNK);
                    start += 1;
                }
            }
        }
    }
    ids
}

/// Joins word pieces back into words, dropping continuation markers.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    for token in tokens {
        match token.strip_prefix(CONTINUATION) {
            Some(rest) => out.push_str(rest),
            None => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(token);
            }
        }
    }
    out
}

/// Encoder input: token ids, segment ids and attention mask, all `max_len` long.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub mask: Vec<u8>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of real (unpadded) positions.
    pub fn real_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m == 1).count()
    }

    fn padded(mut ids: Vec<u32>, mut segments: Vec<u8>, max_len: usize) -> Encoding {
        let real = ids.len();
        ids.resize(max_len, PAD);
        segments.resize(max_len, 0);
        let mut mask = vec![1u8; real];
        mask.resize(max_len, 0);
        Encoding {
            ids,
            segments,
            mask,
        }
    }
}

/// `[CLS] text [SEP]`, truncated from the right and padded to `max_len`.
pub fn encode_single(text: &str, vocab: &Vocab, max_len: usize) -> Result<Encoding, TokenizerError> {
    if max_len < 3 {
        return Err(TokenizerError::MaxLenTooSmall { max_len, min: 3 });
    }
    let mut pieces = tokenize_ids(text, vocab);
    pieces.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(pieces);
    ids.push(SEP);
    let segments = vec![0; ids.len()];
    Ok(Encoding::padded(ids, segments, max_len))
}

/// `[CLS] context [SEP] target [SEP]` with longest-first truncation: while
/// over budget, the longer segment loses its last token (the context on ties).
pub fn encode_pair(
    context: &str,
    target: &str,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Encoding, TokenizerError> {
    if max_len < 5 {
        return Err(TokenizerError::MaxLenTooSmall { max_len, min: 5 });
    }
    let mut ctx = tokenize_ids(context, vocab);
    let mut tgt = tokenize_ids(target, vocab);
    let budget = max_len - 3;
    while ctx.len() + tgt.len() > budget {
        if ctx.len() >= tgt.len() {
            ctx.pop();
        } else {
            tgt.pop();
        }
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(&ctx);
    ids.push(SEP);
    let first = ids.len();
    ids.extend(&tgt);
    ids.push(SEP);
    let mut segments = vec![0u8; first];
    segments.resize(ids.len(), 1);
    Ok(Encoding::padded(ids, segments, max_len))
}

/// Maps ids back to tokens, skipping `[PAD]`.
pub fn decode(ids: &[u32], vocab: &Vocab) -> Result<Vec<String>, TokenizerError> {
    ids.iter()
        .filter(|&&id| id != PAD)
        .map(|&id| {
            vocab
                .token(id)
                .map(str::to_string)
                .ok_or(TokenizerError::IdOutOfRange {
                    id,
                    size: vocab.len(),
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_vocab() -> Vocab {
        build_vocab(&["aa aa b"], 12).unwrap()
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn build_small_vocab() {
        let vocab = small_vocab();
        for token in ["aa", "a", "##a", "b"] {
            assert!(vocab.id(token).is_some(), "{token}");
        }
        for (id, special) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(vocab.id(special), Some(id as u32));
        }
        assert!(vocab.len() <= 12);
    }

    #[test]
    fn vocab_is_deterministic_and_round_trips_as_text() {
        let corpus = ["नमस्ते दोस्त kya haal", "kya baat hai dost", "haal chaal"];
        let a = build_vocab(&corpus, 200).unwrap();
        let b = build_vocab(&corpus, 200).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(Vocab::from_text(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn too_small_target() {
        assert!(matches!(
            build_vocab(&["abc"], 9),
            Err(TokenizerError::VocabTooSmall { required: 10, .. })
        ));
    }

    #[test]
    fn frequency_ranking_breaks_ties_lexicographically() {
        // "ab" and "cd" both occur twice, "ef" once; 4 specials + 12 alphabet pieces + 2 slots.
        let vocab = build_vocab(&["ab cd ab cd ef"], 18).unwrap();
        assert!(vocab.id("ab").is_some());
        assert!(vocab.id("cd").is_some());
        assert!(vocab.id("ef").is_none());
        assert!(vocab.id("ab").unwrap() < vocab.id("cd").unwrap());
    }

    #[test]
    fn longest_match() {
        let vocab = small_vocab();
        assert_eq!(tokenize("aa b", &vocab), strings(&["aa", "b"]));
        let vocab = Vocab::from_tokens(strings(&["[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "##b"])).unwrap();
        assert_eq!(tokenize("ab", &vocab), strings(&["a", "##b"]));
        assert_eq!(tokenize("", &vocab), Vec::<String>::new());
        assert_eq!(tokenize("azb", &vocab), strings(&["a", "[UNK]", "##b"]));
    }

    #[test]
    fn specials_are_not_matched_inside_text() {
        let vocab = build_vocab(&["x [CLS]"], 100).unwrap();
        let ids = tokenize_ids("[CLS]", &vocab);
        assert!(!ids.contains(&CLS));
        assert_eq!(detokenize(&tokenize("[CLS]", &vocab)), "[CLS]");
    }

    #[test]
    fn single_encoding() {
        let vocab = small_vocab();
        let a = vocab.id("a").unwrap();
        let b = vocab.id("b").unwrap();
        let enc = encode_single("a b", &vocab, 8).unwrap();
        assert_eq!(enc.ids, vec![CLS, a, b, SEP, PAD, PAD, PAD, PAD]);
        assert_eq!(enc.mask, vec![1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(enc.segments, vec![0; 8]);

        let long = encode_single("b b b b b b b b b b", &vocab, 6).unwrap();
        assert_eq!(long.ids, vec![CLS, b, b, b, b, SEP]);

        let empty = encode_single("", &vocab, 4).unwrap();
        assert_eq!(empty.ids, vec![CLS, SEP, PAD, PAD]);
        assert!(matches!(encode_single("a", &vocab, 2), Err(TokenizerError::MaxLenTooSmall { .. })));
    }

    #[test]
    fn pair_encoding() {
        let vocab = build_vocab(&["a b c"], 20).unwrap();
        let id = |t| vocab.id(t).unwrap();
        let enc = encode_pair("a b", "c", &vocab, 8).unwrap();
        assert_eq!(enc.ids, vec![CLS, id("a"), id("b"), SEP, id("c"), SEP, PAD, PAD]);
        assert_eq!(enc.segments, vec![0, 0, 0, 0, 1, 1, 0, 0]);

        let empty_ctx = encode_pair("", "c", &vocab, 6).unwrap();
        assert_eq!(empty_ctx.ids, vec![CLS, SEP, id("c"), SEP, PAD, PAD]);
        assert!(matches!(encode_pair("a", "b", &vocab, 4), Err(TokenizerError::MaxLenTooSmall { .. })));
    }

    /// Independent simulation of longest-first truncation on bare counts.
    fn simulate_truncation(mut ctx: usize, mut tgt: usize, max_len: usize) -> (usize, usize) {
        loop {
            if ctx + tgt + 3 <= max_len {
                return (ctx, tgt);
            }
            if ctx >= tgt {
                ctx -= 1;
            } else {
                tgt -= 1;
            }
        }
    }

    #[test]
    fn pair_truncation_is_longest_first() {
        let vocab = build_vocab(&["a c"], 20).unwrap();
        assert_eq!(simulate_truncation(10, 2, 9), (4, 2));
        let enc = encode_pair(&["a"; 10].join(" "), "c c", &vocab, 9).unwrap();
        let first_sep = enc.ids.iter().position(|&i| i == SEP).unwrap();
        assert_eq!(first_sep - 1, 4);
        assert_eq!(enc.ids[first_sep + 1..first_sep + 3], [vocab.id("c").unwrap(); 2]);
        assert_eq!(enc.ids.len(), 9);
    }

    #[test]
    fn decoding() {
        let vocab = small_vocab();
        let enc = encode_single("a b", &vocab, 8).unwrap();
        assert_eq!(decode(&enc.ids, &vocab).unwrap(), strings(&["[CLS]", "a", "b", "[SEP]"]));
        assert!(decode(&[], &vocab).unwrap().is_empty());
        let size = vocab.len() as u32;
        assert!(matches!(decode(&[size], &vocab), Err(TokenizerError::IdOutOfRange { .. })));
    }

    proptest! {
        #[test]
        fn in_corpus_words_round_trip(corpus in proptest::collection::vec("[a-e\u{0915}-\u{0919}]{1,8}( [a-e]{1,5}){0,4}", 1..8), size in 40usize..120) {
            let vocab = build_vocab(&corpus, size).unwrap();
            for text in &corpus {
                for word in text.split_whitespace() {
                    let tokens = tokenize(word, &vocab);
                    prop_assert!(!tokens.iter().any(|t| t == "[UNK]"));
                    prop_assert_eq!(detokenize(&tokens), word);
                }
            }
        }

        #[test]
        fn encodings_obey_length_and_framing(ctx in "[a-c ]{0,40}", tgt in "[a-c ]{0,40}", max_len in 5usize..24) {
            let vocab = build_vocab(&["a b c ab bc"], 40).unwrap();
            for (enc, seps) in [
                (encode_pair(&ctx, &tgt, &vocab, max_len).unwrap(), 2),
                (encode_single(&tgt, &vocab, max_len).unwrap(), 1),
            ] {
                prop_assert_eq!(enc.ids.len(), max_len);
                prop_assert_eq!(enc.segments.len(), max_len);
                prop_assert_eq!(enc.mask.len(), max_len);
                prop_assert_eq!(enc.ids[0], CLS);
                let real = enc.real_len();
                prop_assert_eq!(enc.mask.iter().map(|&m| m as usize).sum::<usize>(), real);
                prop_assert!(enc.ids[real..].iter().all(|&i| i == PAD));
                prop_assert!(enc.ids[..real].iter().all(|&i| i != PAD));
                let real_ids = &enc.ids[..real];
                prop_assert_eq!(real_ids.iter().filter(|&&i| i == CLS).count(), 1);
                prop_assert_eq!(real_ids.iter().filter(|&&i| i == SEP).count(), seps);
                let first_sep = real_ids.iter().position(|&i| i == SEP).unwrap();
                prop_assert!(enc.segments[..=first_sep].iter().all(|&s| s == 0));
                if seps == 2 {
                    prop_assert!(enc.segments[first_sep + 1..real].iter().all(|&s| s == 1));
                }
            }
        }
    }
}
