//! Byte-level corpora: tokenization, document-granularity sampling, corpus
//! files and synthetic multilingual text.
//!
//! Every byte is its own token (`0..=255`); one extra special token, [`BOS`],
//! opens every model window. Special tokens never appear inside a [`Corpus`].

mod files;
mod synthetic;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use files::{
    load_manifest, read_corpus_file, write_corpus_file, write_manifest, CorpusManifest,
};
pub use synthetic::{
    default_suite, disjoint_suite, generate_synthetic_language, make_parallel_set, validate_suite, ByteRange,
    LatentGrammar, Lexicon, ParallelSet, SyntheticLanguageSpec,
};

pub type TokenId = u16;

/// Number of plain byte tokens.
pub const BYTE_TOKENS: usize = 256;
/// Beginning-of-window marker.
pub const BOS: TokenId = 256;
/// Vocabulary size of the byte tokenizer: 256 bytes plus [`BOS`].
pub const VOCAB_SIZE: usize = 257;

pub fn is_special(token: TokenId) -> bool {
    token as usize >= BYTE_TOKENS
}

/// Short ASCII tag naming a language (`"L0"`, `"en"`, ...).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageId(String);

impl LanguageId {
    pub const MAX_LEN: usize = 32;

    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() || code.len() > Self::MAX_LEN {
            return Err(Error::Config(format!(
                "language code {code:?} must be 1..={} bytes",
                Self::MAX_LEN
            )));
        }
        if !code.bytes().all(|b| b.is_ascii_graphic()) {
            return Err(Error::Config(format!(
                "language code {code:?} must be printable ASCII without spaces"
            )));
        }
        Ok(LanguageId(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        LanguageId::new(s)
    }
}

impl From<LanguageId> for String {
    fn from(id: LanguageId) -> String {
        id.0
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Convenience for literals in tests and examples. Panics on an invalid code.
pub fn lang(code: &str) -> LanguageId {
    LanguageId::new(code).expect("valid language code")
}

/// Monolingual token stream split into documents.
///
/// `doc_boundaries` holds the exclusive end offset of every document, so
/// document `i` spans `doc_boundaries[i-1]..doc_boundaries[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    language: LanguageId,
    tokens: Vec<TokenId>,
    doc_boundaries: Vec<usize>,
}

impl Corpus {
    pub fn new(
        language: LanguageId,
        tokens: Vec<TokenId>,
        doc_boundaries: Vec<usize>,
    ) -> Result<Self> {
        if let Some(pos) = tokens.iter().position(|&t| t as usize >= BYTE_TOKENS) {
            return Err(Error::Config(format!(
                "token {} at position {pos} is not a byte token",
                tokens[pos]
            )));
        }
        let mut prev = 0usize;
        for (i, &b) in doc_boundaries.iter().enumerate() {
            if b <= prev || b > tokens.len() {
                return Err(Error::Config(format!(
                    "document boundary #{i} = {b} is not strictly increasing within 1..={}",
                    tokens.len()
                )));
            }
            prev = b;
        }
        if prev != tokens.len() {
            return Err(Error::Config(format!(
                "document boundaries end at {prev}, corpus has {} tokens",
                tokens.len()
            )));
        }
        Ok(Corpus {
            language,
            tokens,
            doc_boundaries,
        })
    }

    /// Build a corpus from documents; empty documents are dropped.
    pub fn from_documents<I, D>(language: LanguageId, docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: AsRef<[TokenId]>,
    {
        let mut tokens = Vec::new();
        let mut bounds = Vec::new();
        for doc in docs {
            let doc = doc.as_ref();
            if doc.is_empty() {
                continue;
            }
            tokens.extend_from_slice(doc);
            bounds.push(tokens.len());
        }
        Corpus::new(language, tokens, bounds)
    }

    pub fn empty(language: LanguageId) -> Self {
        Corpus {
            language,
            tokens: Vec::new(),
            doc_boundaries: Vec::new(),
        }
    }

    pub fn language(&self) -> &LanguageId {
        &self.language
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn doc_boundaries(&self) -> &[usize] {
        &self.doc_boundaries
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_documents(&self) -> usize {
        self.doc_boundaries.len()
    }

    pub fn documents(&self) -> impl Iterator<Item = &[TokenId]> + '_ {
        let starts = std::iter::once(0).chain(self.doc_boundaries.iter().copied());
        starts
            .zip(self.doc_boundaries.iter().copied())
            .map(move |(s, e)| &self.tokens[s..e])
    }

    /// Partition into `n` contiguous runs of whole documents. Shards may be
    /// empty when there are fewer documents than shards.
    pub fn split_documents(&self, n: usize) -> Vec<Corpus> {
        let n = n.max(1);
        let docs: Vec<&[TokenId]> = self.documents().collect();
        let per = docs.len().div_ceil(n).max(1);
        let mut out: Vec<Corpus> = docs
            .chunks(per)
            .map(|chunk| {
                Corpus::from_documents(self.language.clone(), chunk.iter().copied())
                    .expect("documents of a valid corpus")
            })
            .collect();
        while out.len() < n {
            out.push(Corpus::empty(self.language.clone()));
        }
        out
    }

    /// Split off the last `heldout_docs` documents.
    pub fn split_tail(&self, heldout_docs: usize) -> (Corpus, Corpus) {
        let docs: Vec<&[TokenId]> = self.documents().collect();
        let cut = docs.len().saturating_sub(heldout_docs);
        let head = Corpus::from_documents(self.language.clone(), docs[..cut].iter().copied());
        let tail = Corpus::from_documents(self.language.clone(), docs[cut..].iter().copied());
        (head.expect("valid"), tail.expect("valid"))
    }

    /// Consecutive chunks of at most `chunk_len` tokens, never crossing a
    /// document boundary. Model windows are `[BOS] + chunk`.
    pub fn windows(&self, chunk_len: usize) -> impl Iterator<Item = &[TokenId]> + '_ {
        assert!(chunk_len > 0, "chunk_len must be positive");
        self.documents().flat_map(move |d| d.chunks(chunk_len))
    }
}

pub fn tokenize(bytes: &[u8]) -> Vec<TokenId> {
    bytes.iter().map(|&b| TokenId::from(b)).collect()
}

/// Inverse of [`tokenize`]; special tokens are dropped.
pub fn detokenize(tokens: &[TokenId]) -> Vec<u8> {
    tokens
        .iter()
        .filter(|&&t| !is_special(t))
        .map(|&t| t as u8)
        .collect()
}

/// Byte-level ingestion of raw text. Every byte becomes a token (newlines
/// included) and each line closes a document.
pub fn ingest_text(bytes: &[u8], language: LanguageId) -> Corpus {
    let tokens = tokenize(bytes);
    let mut bounds: Vec<usize> = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .map(|(i, _)| i + 1)
        .collect();
    if bounds.last().copied() != Some(tokens.len()) && !tokens.is_empty() {
        bounds.push(tokens.len());
    }
    Corpus {
        language,
        tokens,
        doc_boundaries: bounds,
    }
}

/// Draw `min(n, corpus.len())` tokens at document granularity.
///
/// Documents are visited in a seed-determined order and concatenated; the
/// last one is truncated to hit the budget exactly. A budget covering the
/// whole corpus returns it unchanged, in original order.
pub fn sample_tokens(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Argument("sample size must be positive".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Argument(format!(
            "cannot sample from empty corpus for {}",
            corpus.language
        )));
    }
    if n >= corpus.len() {
        return Ok(corpus.clone());
    }
    let docs: Vec<&[TokenId]> = corpus.documents().collect();
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = Vec::new();
    let mut remaining = n;
    for i in order {
        if remaining == 0 {
            break;
        }
        let doc = docs[i];
        let take = doc.len().min(remaining);
        picked.push(&doc[..take]);
        remaining -= take;
    }
    Corpus::from_documents(corpus.language.clone(), picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ingest_is_byte_identity() {
        let c = ingest_text(b"ab", lang("en"));
        assert_eq!(c.tokens(), &[97, 98]);
        assert_eq!(c.doc_boundaries(), &[2]);
    }

    #[test]
    fn windows_respect_documents() {
        let c = ingest_text(b"abcde\nfg", lang("en"));
        let w: Vec<&[TokenId]> = c.windows(2).collect();
        assert_eq!(w, vec![&[97, 98][..], &[99, 100], &[101, 10], &[102, 103]]);
    }

    #[test]
    fn ingest_empty() {
        let c = ingest_text(b"", lang("en"));
        assert!(c.is_empty());
        assert_eq!(c.n_documents(), 0);
    }

    #[test]
    fn ingest_one_mebibyte() {
        let bytes: Vec<u8> = (0..(1usize << 20)).map(|i| (i * 31 % 251) as u8).collect();
        let c = ingest_text(&bytes, lang("x"));
        assert_eq!(c.len(), bytes.len());
        assert_eq!(detokenize(c.tokens()), bytes);
    }

    #[test]
    fn ingest_splits_lines_into_documents() {
        let c = ingest_text(b"ab\ncd\ne", lang("en"));
        let docs: Vec<&[TokenId]> = c.documents().collect();
        assert_eq!(docs, vec![&[97, 98, 10][..], &[99, 100, 10][..], &[101][..]]);
    }

    #[test]
    fn detokenize_drops_specials() {
        assert_eq!(detokenize(&[BOS, 65, 66]), b"AB");
    }

    #[test]
    fn corpus_rejects_bad_boundaries() {
        assert!(Corpus::new(lang("a"), vec![1, 2, 3], vec![2, 2, 3]).is_err());
        assert!(Corpus::new(lang("a"), vec![1, 2, 3], vec![4]).is_err());
        assert!(Corpus::new(lang("a"), vec![1, 2, 3], vec![2]).is_err());
        assert!(Corpus::new(lang("a"), vec![BOS], vec![1]).is_err());
    }

    #[test]
    fn language_codes_validated() {
        assert!(LanguageId::new("").is_err());
        assert!(LanguageId::new("a b").is_err());
        assert!(LanguageId::new("zh").is_ok());
    }

    fn three_docs() -> Corpus {
        Corpus::from_documents(lang("L0"), [vec![1u16, 2, 3], vec![4, 5], vec![6, 7, 8, 9]])
            .unwrap()
    }

    #[test]
    fn sample_full_budget_returns_original_order() {
        let c = three_docs();
        let s = sample_tokens(&c, 100, 3).unwrap();
        assert_eq!(s, c);
    }

    #[test]
    fn sample_zero_is_error() {
        assert!(matches!(
            sample_tokens(&three_docs(), 0, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn sample_is_deterministic_and_exact() {
        let c = three_docs();
        let a = sample_tokens(&c, 5, 42).unwrap();
        let b = sample_tokens(&c, 5, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn split_documents_covers_everything() {
        let c = three_docs();
        let shards = c.split_documents(4);
        assert_eq!(shards.len(), 4);
        let joined: Vec<TokenId> = shards.iter().flat_map(|s| s.tokens().to_vec()).collect();
        assert_eq!(joined, c.tokens());
    }

    proptest! {
        #[test]
        fn byte_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            prop_assert_eq!(detokenize(&tokenize(&bytes)), bytes.clone());
            let c = ingest_text(&bytes, lang("p"));
            prop_assert_eq!(detokenize(c.tokens()), bytes);
        }

        #[test]
        fn sample_respects_budget(n in 1usize..20, seed in any::<u64>()) {
            let c = three_docs();
            let s = sample_tokens(&c, n, seed).unwrap();
            prop_assert_eq!(s.len(), n.min(c.len()));
        }
    }
}
