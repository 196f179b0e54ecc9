//! Tokenization, vocabulary construction and word-overlap indicators.
//!
//! Texts are lowercased, split on whitespace, and leading/trailing
//! punctuation is peeled off into one-character tokens, so `"visa."` becomes
//! `["visa", "."]` while `"don't"` stays whole.

use std::collections::{HashMap, HashSet};

pub const DEFAULT_MAX_LEN: usize = 100;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// A preprocessed text. `ids` and `overlaps` are empty until filled by
/// [`Vocabulary::encode`] and [`overlap_indicators`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    pub overlaps: Vec<u8>,
}

impl TokenizedText {
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        TokenizedText {
            tokens: tokens.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn push_word(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let start = chars.iter().position(|&c| !is_punct(c));
    let Some(start) = start else {
        out.extend(chars.iter().map(|c| c.to_string()));
        return;
    };
    let end = chars.iter().rposition(|&c| !is_punct(c)).unwrap_or(start);
    out.extend(chars[..start].iter().map(|c| c.to_string()));
    out.push(chars[start..=end].iter().collect());
    out.extend(chars[end + 1..].iter().map(|c| c.to_string()));
}

/// Tokenizes `subject` followed by `body`, keeping at most `max_len` tokens.
pub fn preprocess(subject: Option<&str>, body: &str, max_len: usize) -> TokenizedText {
    let mut tokens = Vec::new();
    for part in subject.into_iter().chain(std::iter::once(body)) {
        for word in part.to_lowercase().split_whitespace() {
            push_word(word, &mut tokens);
            if tokens.len() >= max_len {
                break;
            }
        }
        if tokens.len() >= max_len {
            break;
        }
    }
    tokens.truncate(max_len);
    TokenizedText::from_tokens(tokens)
}

/// For each token of `target`, 1 if it also occurs in any of `others`.
pub fn overlap_indicators<'a>(
    target: &TokenizedText,
    others: impl IntoIterator<Item = &'a TokenizedText>,
) -> Vec<u8> {
    let seen: HashSet<&str> = others
        .into_iter()
        .flat_map(|t| t.tokens.iter().map(String::as_str))
        .collect();
    target
        .tokens
        .iter()
        .map(|t| u8::from(seen.contains(t.as_str())))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Builds a vocabulary whose non-reserved ids follow the iteration order
    /// of `tokens`. Duplicates and reserved names are ignored.
    pub fn from_tokens<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut vocab = Vocabulary {
            index: HashMap::new(),
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
        };
        vocab.index.insert(PAD_TOKEN.to_string(), PAD_ID);
        vocab.index.insert(UNK_TOKEN.to_string(), UNK_ID);
        for tok in tokens {
            let tok = tok.as_ref();
            if !vocab.index.contains_key(tok) {
                vocab.index.insert(tok.to_string(), vocab.tokens.len());
                vocab.tokens.push(tok.to_string());
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens[2..].iter().map(String::as_str)
    }

    pub fn encode(&self, text: &mut TokenizedText) {
        text.ids = text.tokens.iter().map(|t| self.id(t)).collect();
    }
}

/// Collects every token seen at least `min_count` times. Ids are assigned by
/// descending frequency, ties broken lexicographically.
pub fn build_vocabulary<'a>(
    corpus: impl IntoIterator<Item = &'a TokenizedText>,
    min_count: usize,
) -> Vocabulary {
    let min_count = min_count.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for text in corpus {
        for tok in &text.tokens {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t))
}
