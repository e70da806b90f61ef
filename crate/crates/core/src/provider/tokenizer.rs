use std::collections::HashMap;
use std::path::Path;

use super::{ProviderError, TokenId};

/// Maps text to provider token ids and back.
pub trait Tokenizer: Send + Sync {
    /// Deterministic: equal inputs give equal outputs. `""` gives `[]`.
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError>;

    fn detokenize(&self, ids: &[TokenId]) -> Result<String, ProviderError>;

    fn vocab_size(&self) -> usize;

    fn token_id(&self, token: &str) -> Option<TokenId>;

    /// Hex digest identifying the vocabulary.
    fn fingerprint(&self) -> &str;
}

/// Whitespace-delimited word tokenizer over a closed vocabulary.
///
/// Token ids are vocabulary positions. Detokenizing joins tokens with a single
/// space, so a round trip reproduces the input up to whitespace collapsing.
#[derive(Debug, Clone)]
pub struct VocabTokenizer {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    fingerprint: String,
}

impl VocabTokenizer {
    pub fn new(tokens: Vec<String>) -> Result<Self, ProviderError> {
        if tokens.is_empty() {
            return Err(ProviderError::Tokenizer("vocabulary is empty".into()));
        }
        if tokens.len() > TokenId::MAX as usize {
            return Err(ProviderError::Tokenizer("vocabulary too large".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(ProviderError::Tokenizer(format!(
                    "vocabulary entry {i} ({tok:?}) is empty or contains whitespace"
                )));
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(ProviderError::Tokenizer(format!(
                    "duplicate vocabulary entry {tok:?}"
                )));
            }
        }
        let fingerprint = crate::sha256_hex(tokens.join("\n").as_bytes());
        Ok(Self {
            tokens,
            index,
            fingerprint,
        })
    }

    /// Builds a vocabulary from the whitespace pieces of `texts`, in order of
    /// first appearance.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self, ProviderError> {
        let mut seen = std::collections::HashSet::new();
        let mut tokens = Vec::new();
        for text in texts {
            for piece in text.split_whitespace() {
                if seen.insert(piece) {
                    tokens.push(piece.to_string());
                }
            }
        }
        Self::new(tokens)
    }

    /// Reads a vocabulary file: one token per line, line number = token id.
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
        let tokens = raw
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .filter(|l| !l.is_empty())
            .collect();
        Self::new(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl Tokenizer for VocabTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        text.split_whitespace()
            .map(|piece| {
                self.index
                    .get(piece)
                    .copied()
                    .ok_or_else(|| ProviderError::Tokenizer(format!("unknown token {piece:?}")))
            })
            .collect()
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String, ProviderError> {
        let mut pieces = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self
                .tokens
                .get(id as usize)
                .ok_or_else(|| ProviderError::Tokenizer(format!("token id {id} out of range")))?;
            pieces.push(tok.as_str());
        }
        Ok(pieces.join(" "))
    }

    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    fn token_id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> VocabTokenizer {
        VocabTokenizer::new(words.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn empty_text_gives_empty_sequence() {
        assert!(vocab(&["a"]).tokenize("").unwrap().is_empty());
        assert!(vocab(&["a"]).tokenize("  \t ").unwrap().is_empty());
    }

    #[test]
    fn round_trip_collapses_whitespace() {
        let t = vocab(&["acute", "cholera"]);
        let ids = t.tokenize("  acute\t cholera ").unwrap();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(t.detokenize(&ids).unwrap(), "acute cholera");
    }

    #[test]
    fn unknown_word_is_an_error() {
        assert!(matches!(
            vocab(&["a"]).tokenize("a b"),
            Err(ProviderError::Tokenizer(_))
        ));
    }

    #[test]
    fn rejects_bad_vocabularies() {
        assert!(VocabTokenizer::new(vec![]).is_err());
        assert!(VocabTokenizer::new(vec!["a".into(), "a".into()]).is_err());
        assert!(VocabTokenizer::new(vec!["a b".into()]).is_err());
    }

    #[test]
    fn fingerprint_depends_on_order() {
        assert_ne!(
            vocab(&["a", "b"]).fingerprint(),
            vocab(&["b", "a"]).fingerprint()
        );
        assert_eq!(
            vocab(&["a", "b"]).fingerprint(),
            vocab(&["a", "b"]).fingerprint()
        );
    }
}
