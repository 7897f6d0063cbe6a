//! Synthetic languages as surface re-encodings of one latent grammar.
//!
//! The latent layer produces sentences of word ranks. Sentence templates
//! (fixed by `grammar_seed`) mark each slot either as a fresh draw from a Zipf
//! law over `lexicon_size` ranks or as an echo of an earlier slot; echoes copy
//! a Zipf-distributed word, so every slot stays Zipf-distributed while the
//! sequence carries cross-word dependencies a model can learn.
//!
//! Each language spells every latent rank with its own byte alphabet. The
//! lowest byte of the alphabet separates words, the next one ends sentences,
//! and the rest are letters. With `shared_separators` every language instead
//! separates words with `' '` and ends sentences with `'.'`, and the whole
//! alphabet is letters. With `shared_byte_fraction > 0` letters are drawn
//! from the common `shared_pool` at that rate.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::{Corpus, LanguageId, TokenId};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Inclusive byte range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u8; 2]", into = "[u8; 2]")]
pub struct ByteRange {
    pub lo: u8,
    pub hi: u8,
}

impl ByteRange {
    pub const fn new(lo: u8, hi: u8) -> Self {
        ByteRange { lo, hi }
    }

    pub fn len(&self) -> usize {
        if self.hi < self.lo {
            0
        } else {
            (self.hi - self.lo) as usize + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, b: u8) -> bool {
        self.lo <= b && b <= self.hi
    }

    pub fn overlaps(&self, other: &ByteRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.lo <= other.hi && other.lo <= self.hi
    }
}

impl From<[u8; 2]> for ByteRange {
    fn from(v: [u8; 2]) -> Self {
        ByteRange::new(v[0], v[1])
    }
}

impl From<ByteRange> for [u8; 2] {
    fn from(r: ByteRange) -> Self {
        [r.lo, r.hi]
    }
}

fn default_lexicon_size() -> usize {
    512
}

fn default_shared_pool() -> ByteRange {
    ByteRange::new(b'0', b'9')
}

/// Key-value description of one synthetic language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLanguageSpec {
    pub code: LanguageId,
    pub alphabet: ByteRange,
    pub word_len_min: usize,
    pub word_len_max: usize,
    pub zipf_exponent: f64,
    #[serde(default = "default_lexicon_size")]
    pub lexicon_size: usize,
    pub grammar_seed: u64,
    #[serde(default)]
    pub shared_byte_fraction: f64,
    #[serde(default = "default_shared_pool")]
    pub shared_pool: ByteRange,
    #[serde(default)]
    pub shared_separators: bool,
}

const SHARED_SEPARATOR: u8 = b' ';
const SHARED_TERMINATOR: u8 = b'.';

impl SyntheticLanguageSpec {
    pub fn new(code: LanguageId, alphabet: ByteRange) -> Self {
        SyntheticLanguageSpec {
            code,
            alphabet,
            word_len_min: 2,
            word_len_max: 5,
            zipf_exponent: 1.1,
            lexicon_size: default_lexicon_size(),
            grammar_seed: 17,
            shared_byte_fraction: 0.0,
            shared_pool: default_shared_pool(),
            shared_separators: false,
        }
    }

    pub fn separator(&self) -> u8 {
        if self.shared_separators {
            SHARED_SEPARATOR
        } else {
            self.alphabet.lo
        }
    }

    pub fn terminator(&self) -> u8 {
        if self.shared_separators {
            SHARED_TERMINATOR
        } else {
            self.alphabet.lo + 1
        }
    }

    fn letters(&self) -> Vec<u8> {
        let first = if self.shared_separators { self.alphabet.lo } else { self.alphabet.lo + 2 };
        (first..=self.alphabet.hi).collect()
    }

    /// All bytes this language can emit.
    pub fn byte_set(&self) -> Vec<u8> {
        let mut v: Vec<u8> = (self.alphabet.lo..=self.alphabet.hi).collect();
        if self.shared_byte_fraction > 0.0 {
            v.extend(self.shared_pool.lo..=self.shared_pool.hi);
        }
        if self.shared_separators {
            v.extend([SHARED_SEPARATOR, SHARED_TERMINATOR]);
        }
        v.sort_unstable();
        v
    }

    pub fn validate(&self) -> Result<()> {
        let code = &self.code;
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Config(format!(
                "{code}: zipf_exponent must be positive, got {}",
                self.zipf_exponent
            )));
        }
        if self.alphabet.len() < 4 {
            return Err(Error::Config(format!(
                "{code}: alphabet needs at least 4 bytes (separator, terminator, 2 letters)"
            )));
        }
        if self.alphabet.contains(b'\n') {
            return Err(Error::Config(format!(
                "{code}: alphabet must not contain the newline byte"
            )));
        }
        if self.word_len_min == 0 || self.word_len_min > self.word_len_max {
            return Err(Error::Config(format!(
                "{code}: word length range {}..={} is invalid",
                self.word_len_min, self.word_len_max
            )));
        }
        if self.lexicon_size == 0 {
            return Err(Error::Config(format!("{code}: lexicon_size must be positive")));
        }
        if !(0.0..=1.0).contains(&self.shared_byte_fraction) {
            return Err(Error::Config(format!(
                "{code}: shared_byte_fraction must lie in [0, 1]"
            )));
        }
        if self.shared_byte_fraction > 0.0 {
            if self.shared_pool.is_empty() || self.shared_pool.contains(b'\n') {
                return Err(Error::Config(format!("{code}: invalid shared pool")));
            }
            if self.shared_pool.overlaps(&self.alphabet) {
                return Err(Error::Config(format!(
                    "{code}: alphabet {:#04x}..={:#04x} overlaps the shared pool",
                    self.alphabet.lo, self.alphabet.hi
                )));
            }
        }
        if self.shared_separators
            && [SHARED_SEPARATOR, SHARED_TERMINATOR].iter().any(|&b| {
                self.alphabet.contains(b) || self.shared_byte_fraction > 0.0 && self.shared_pool.contains(b)
            })
        {
            return Err(Error::Config(format!(
                "{code}: shared separators ' ' and '.' must lie outside the alphabet and shared pool"
            )));
        }
        let letters = (self.letters().len()
            + if self.shared_byte_fraction > 0.0 {
                self.shared_pool.len()
            } else {
                0
            }) as f64;
        let capacity: f64 = (self.word_len_min..=self.word_len_max)
            .map(|l| letters.powi(l as i32))
            .sum();
        if capacity < 2.0 * self.lexicon_size as f64 {
            return Err(Error::Config(format!(
                "{code}: {} distinct words cannot be spelled with {letters} letters and lengths {}..={}",
                self.lexicon_size, self.word_len_min, self.word_len_max
            )));
        }
        Ok(())
    }
}

/// Validate a set of languages meant to coexist in one run: each spec on its
/// own, unique codes, and pairwise-disjoint alphabets (bytes may only be
/// shared through the shared pool).
pub fn validate_suite(specs: &[SyntheticLanguageSpec]) -> Result<()> {
    for s in specs {
        s.validate()?;
    }
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            if a.code == b.code {
                return Err(Error::Config(format!("duplicate language code {}", a.code)));
            }
            if a.alphabet.overlaps(&b.alphabet) {
                return Err(Error::Config(format!(
                    "alphabets of {} and {} overlap; only the shared pool may be common",
                    a.code, b.code
                )));
            }
            let seps = [SHARED_SEPARATOR, SHARED_TERMINATOR];
            if a.shared_separators && seps.iter().any(|&x| b.alphabet.contains(x))
                || b.shared_separators && seps.iter().any(|&x| a.alphabet.contains(x))
            {
                return Err(Error::Config(format!(
                    "alphabet of {} or {} contains a shared separator",
                    a.code, b.code
                )));
            }
            if a.shared_byte_fraction > 0.0 && a.shared_pool.overlaps(&b.alphabet)
                || b.shared_byte_fraction > 0.0 && b.shared_pool.overlaps(&a.alphabet)
            {
                return Err(Error::Config(format!(
                    "shared pool of {} or {} overlaps the other's alphabet",
                    a.code, b.code
                )));
            }
        }
    }
    Ok(())
}

/// Four disjoint-alphabet languages `L0..L3` sharing one grammar, each
/// with its own separators and no shared pool.
pub fn disjoint_suite() -> Vec<SyntheticLanguageSpec> {
    [
        ("L0", 0x41u8, 0x5Au8),
        ("L1", 0x61, 0x7A),
        ("L2", 0xC0, 0xD9),
        ("L3", 0xE0, 0xF9),
    ]
    .into_iter()
    .map(|(code, lo, hi)| {
        SyntheticLanguageSpec::new(LanguageId::new(code).unwrap(), ByteRange::new(lo, hi))
    })
    .collect()
}

/// The toy-model suite: the disjoint alphabets of [`disjoint_suite`] with
/// `' '`/`'.'` as common separators and 30% of letters drawn from the
/// shared digit pool.
pub fn default_suite() -> Vec<SyntheticLanguageSpec> {
    disjoint_suite()
        .into_iter()
        .map(|mut s| {
            s.shared_separators = true;
            s.shared_byte_fraction = 0.3;
            s
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Fresh,
    Echo(usize),
}

/// Sentence templates plus the Zipf law over latent word ranks.
#[derive(Clone, Debug)]
pub struct LatentGrammar {
    templates: Vec<Vec<Slot>>,
    zipf: Zipf<f64>,
}

impl LatentGrammar {
    const N_TEMPLATES: usize = 24;
    const ECHO_RATE: f64 = 0.3;

    pub fn new(grammar_seed: u64, lexicon_size: usize, zipf_exponent: f64) -> Result<Self> {
        let zipf = Zipf::new(lexicon_size as f64, zipf_exponent)
            .map_err(|e| Error::Config(format!("zipf law: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(grammar_seed, "templates"));
        let templates = (0..Self::N_TEMPLATES)
            .map(|_| {
                let len = rng.random_range(3..=8);
                (0..len)
                    .map(|i| {
                        if i > 0 && rng.random_bool(Self::ECHO_RATE) {
                            Slot::Echo(rng.random_range(0..i))
                        } else {
                            Slot::Fresh
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(LatentGrammar { templates, zipf })
    }

    /// One latent sentence as a list of 0-based word ranks.
    pub fn sentence<R: Rng>(&self, rng: &mut R) -> Vec<u32> {
        let template = &self.templates[rng.random_range(0..self.templates.len())];
        let mut words: Vec<u32> = Vec::with_capacity(template.len());
        for slot in template {
            let w = match *slot {
                Slot::Fresh => self.zipf.sample(rng) as u32 - 1,
                Slot::Echo(j) => words[j],
            };
            words.push(w);
        }
        words
    }
}

/// Spelling of every latent rank in one language.
#[derive(Clone, Debug)]
pub struct Lexicon {
    words: Vec<Vec<u8>>,
    separator: u8,
    terminator: u8,
}

impl Lexicon {
    pub fn new(spec: &SyntheticLanguageSpec) -> Result<Self> {
        spec.validate()?;
        let seed = derive_seed(spec.grammar_seed, &format!("lexicon/{}", spec.code));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let letters = spec.letters();
        let pool: Vec<u8> = (spec.shared_pool.lo..=spec.shared_pool.hi).collect();
        let mut seen = HashSet::new();
        let mut words = Vec::with_capacity(spec.lexicon_size);
        for rank in 0..spec.lexicon_size {
            let mut attempts = 0;
            let word = loop {
                let len = rng.random_range(spec.word_len_min..=spec.word_len_max);
                let w: Vec<u8> = (0..len)
                    .map(|_| {
                        if spec.shared_byte_fraction > 0.0
                            && rng.random_bool(spec.shared_byte_fraction)
                        {
                            pool[rng.random_range(0..pool.len())]
                        } else {
                            letters[rng.random_range(0..letters.len())]
                        }
                    })
                    .collect();
                if seen.insert(w.clone()) {
                    break w;
                }
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::Config(format!(
                        "{}: could not find a unique spelling for rank {rank}",
                        spec.code
                    )));
                }
            };
            words.push(word);
        }
        Ok(Lexicon {
            words,
            separator: spec.separator(),
            terminator: spec.terminator(),
        })
    }

    pub fn spelling(&self, rank: u32) -> &[u8] {
        &self.words[rank as usize]
    }

    /// Surface bytes of a latent sentence.
    pub fn render(&self, sentence: &[u32], out: &mut Vec<u8>) {
        for (i, &w) in sentence.iter().enumerate() {
            if i > 0 {
                out.push(self.separator);
            }
            out.extend_from_slice(self.spelling(w));
        }
        out.push(self.terminator);
    }
}

fn to_tokens(bytes: &[u8]) -> Vec<TokenId> {
    bytes.iter().map(|&b| TokenId::from(b)).collect()
}

/// Generate exactly `n_tokens` tokens of monolingual text, 2–6 sentences per
/// document. Deterministic in `(spec, seed)`.
pub fn generate_synthetic_language(
    spec: &SyntheticLanguageSpec,
    n_tokens: usize,
    seed: u64,
) -> Result<Corpus> {
    if n_tokens == 0 {
        return Err(Error::Argument("n_tokens must be positive".into()));
    }
    spec.validate()?;
    let grammar = LatentGrammar::new(spec.grammar_seed, spec.lexicon_size, spec.zipf_exponent)?;
    let lexicon = Lexicon::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("corpus/{}", spec.code)));
    let mut docs: Vec<Vec<TokenId>> = Vec::new();
    let mut total = 0usize;
    while total < n_tokens {
        let n_sent = rng.random_range(2..=6);
        let mut bytes = Vec::new();
        for _ in 0..n_sent {
            lexicon.render(&grammar.sentence(&mut rng), &mut bytes);
        }
        bytes.truncate(n_tokens - total);
        total += bytes.len();
        docs.push(to_tokens(&bytes));
    }
    Corpus::from_documents(spec.code.clone(), docs)
}

/// Aligned texts: every group is one latent sentence rendered in each
/// language.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelSet {
    pub languages: Vec<LanguageId>,
    /// Latent word ranks behind each group.
    pub skeletons: Vec<Vec<u32>>,
    /// `groups[g][k]` is the text of group `g` in `languages[k]`.
    pub groups: Vec<Vec<Vec<TokenId>>>,
}

impl ParallelSet {
    /// Wrap externally prepared aligned texts.
    pub fn from_texts(languages: Vec<LanguageId>, groups: Vec<Vec<Vec<TokenId>>>) -> Result<Self> {
        if languages.len() < 2 {
            return Err(Error::Argument("a parallel set needs at least two languages".into()));
        }
        if let Some(g) = groups.iter().position(|g| g.len() != languages.len()) {
            return Err(Error::Argument(format!(
                "group {g} does not have exactly one text per language"
            )));
        }
        Ok(ParallelSet {
            languages,
            skeletons: Vec::new(),
            groups,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn language_index(&self, id: &LanguageId) -> Option<usize> {
        self.languages.iter().position(|l| l == id)
    }
}

/// Render `n_groups` distinct latent sentences in every language of `specs`.
/// All specs must share the grammar (seed, lexicon size, Zipf exponent).
pub fn make_parallel_set(
    specs: &[SyntheticLanguageSpec],
    n_groups: usize,
    seed: u64,
) -> Result<ParallelSet> {
    if specs.len() < 2 {
        return Err(Error::Argument("a parallel set needs at least two languages".into()));
    }
    if n_groups == 0 {
        return Err(Error::Argument("n_groups must be positive".into()));
    }
    validate_suite(specs)?;
    let first = &specs[0];
    if let Some(s) = specs.iter().find(|s| {
        s.grammar_seed != first.grammar_seed
            || s.lexicon_size != first.lexicon_size
            || s.zipf_exponent != first.zipf_exponent
    }) {
        return Err(Error::Config(format!(
            "{} does not share the latent grammar of {}",
            s.code, first.code
        )));
    }
    let grammar = LatentGrammar::new(first.grammar_seed, first.lexicon_size, first.zipf_exponent)?;
    let lexicons = specs.iter().map(Lexicon::new).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "parallel"));
    let mut seen = HashSet::new();
    let mut skeletons = Vec::with_capacity(n_groups);
    let mut attempts = 0usize;
    while skeletons.len() < n_groups {
        let s = grammar.sentence(&mut rng);
        if seen.insert(s.clone()) {
            skeletons.push(s);
        } else {
            attempts += 1;
            if attempts > 100 * n_groups + 10_000 {
                return Err(Error::Config(format!(
                    "grammar cannot produce {n_groups} distinct sentences"
                )));
            }
        }
    }
    let groups = skeletons
        .iter()
        .map(|s| {
            lexicons
                .iter()
                .map(|lex| {
                    let mut bytes = Vec::new();
                    lex.render(s, &mut bytes);
                    to_tokens(&bytes)
                })
                .collect()
        })
        .collect();
    Ok(ParallelSet {
        languages: specs.iter().map(|s| s.code.clone()).collect(),
        skeletons,
        groups,
    })
}
