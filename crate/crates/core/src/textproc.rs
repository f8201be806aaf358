//! Text preprocessing: normalization, tokenization, vocabulary, pair
//! filtering, byte capping, parallel corpus files and a synthetic corpus.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use unicode_properties::{GeneralCategory, UnicodeGeneralCategory};

use crate::numeric::Rng;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid UTF-8")]
    Encoding { path: PathBuf, line: usize },
    #[error("invalid UTF-8 at byte {0}")]
    InvalidUtf8(usize),
    #[error("line counts differ: {src} source lines vs {tgt} target lines")]
    LineCountMismatch { src: usize, tgt: usize },
    #[error("{path}:{line}: empty line")]
    EmptyLine { path: PathBuf, line: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{0}")]
    Invalid(String),
}

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "UNK", "<s>", "</s>"];

/// Lowercases, maps every Unicode decimal digit to `#`, and collapses
/// whitespace runs to single spaces with no leading or trailing space.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .map(|c| if c.general_category() == GeneralCategory::DecimalNumber { '#' } else { c })
        .collect();
    let lower = mapped.to_lowercase();
    lower.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// [`normalize`] for raw bytes, rejecting invalid UTF-8.
pub fn normalize_bytes(bytes: &[u8]) -> Result<String, TextError> {
    let s = std::str::from_utf8(bytes).map_err(|e| TextError::InvalidUtf8(e.valid_up_to()))?;
    Ok(normalize(s))
}

const DETACHED: &[char] = &['.', ',', ';', ':', '!', '?', '"', '(', ')'];
const CONTRACTIONS: &[&str] = &["'s", "'re", "'ve", "'ll", "'d", "'m"];

/// Simplified Penn Treebank tokenization of normalized text.
///
/// Per whitespace-separated chunk: leading and trailing `. , ; : ! ? " ( )`
/// become their own tokens (a trailing period stays attached when the word
/// has another period, so `u.s.` survives), then `n't`, `'s`, `'re`, `'ve`,
/// `'ll`, `'d`, `'m` are split off. Hyphens and inner punctuation stay.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut core = chunk;
        while let Some(c) = core.chars().next().filter(|c| DETACHED.contains(c)) {
            out.push(c.to_string());
            core = &core[c.len_utf8()..];
        }
        let mut trailing = Vec::new();
        while let Some(c) = core.chars().next_back().filter(|c| DETACHED.contains(c)) {
            let rest = &core[..core.len() - c.len_utf8()];
            if c == '.' && rest.contains('.') {
                break;
            }
            trailing.push(c.to_string());
            core = rest;
        }
        if !core.is_empty() {
            split_contraction(core, &mut out);
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

fn split_contraction(word: &str, out: &mut Vec<String>) {
    if word.len() > 3 && word.ends_with("n't") {
        out.push(word[..word.len() - 3].to_string());
        out.push("n't".to_string());
        return;
    }
    for suffix in CONTRACTIONS {
        if word.len() > suffix.len() && word.ends_with(suffix) {
            out.push(word[..word.len() - suffix.len()].to_string());
            out.push(suffix.to_string());
            return;
        }
    }
    out.push(word.to_string());
}

/// Normalize then tokenize.
pub fn preprocess(text: &str) -> Vec<String> {
    tokenize(&normalize(text))
}

/// Bidirectional token/id map with four reserved ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from explicit non-reserved tokens, in order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(TextError::Invalid(format!("duplicate vocabulary token '{t}'")));
            }
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(RESERVED[UNK as usize], String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

/// Keeps the `max_size - 4` most frequent tokens of sources and targets,
/// breaking frequency ties alphabetically.
pub fn build_vocab(pairs: &[Pair], max_size: usize) -> Result<Vocab, TextError> {
    if max_size <= RESERVED.len() {
        return Err(TextError::Invalid(format!("vocabulary size {max_size} leaves no room past the reserved ids")));
    }
    if pairs.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in pairs {
        for t in p.source.iter().chain(&p.target) {
            if !RESERVED.contains(&t.as_str()) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED.len());
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// One sentence/headline example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl Pair {
    pub fn new<S: AsRef<str>>(source: &[S], target: &[S]) -> Self {
        Self {
            source: source.iter().map(|s| s.as_ref().to_string()).collect(),
            target: target.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub pairs: Vec<Pair>,
    pub provenance: String,
}

/// Lowercase stopword set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

const BUILTIN_STOPWORDS: &str = include_str!("../data/stopwords.txt");

impl Stopwords {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_STOPWORDS)
    }

    /// One token per line; blank lines are skipped.
    pub fn parse(text: &str) -> Self {
        Self(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_lowercase).collect())
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Ok(Self::parse(&read_utf8(path)?))
    }

    pub fn empty() -> Self {
        Self(HashSet::new())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn is_content(token: &str, stopwords: &Stopwords) -> bool {
    !stopwords.contains(token) && token.chars().any(char::is_alphanumeric)
}

/// Drops pairs whose source asks a question or whose source and target
/// share no content word.
pub fn filter_pairs(pairs: Vec<Pair>, stopwords: &Stopwords) -> Vec<Pair> {
    pairs
        .into_iter()
        .filter(|p| {
            if p.source.iter().any(|t| t.contains('?')) {
                return false;
            }
            let src: HashSet<&str> =
                p.source.iter().map(String::as_str).filter(|t| is_content(t, stopwords)).collect();
            p.target.iter().any(|t| src.contains(t.as_str()))
        })
        .collect()
}

/// Longest prefix of whole tokens whose space-joined rendering fits in
/// `cap` bytes. A first token longer than `cap` is cut at the last char
/// boundary within `cap` bytes.
pub fn truncate_to_bytes<S: AsRef<str>>(tokens: &[S], cap: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut used = 0;
    for t in tokens {
        let t = t.as_ref();
        let need = if out.is_empty() { t.len() } else { used + 1 + t.len() };
        if need > cap {
            if out.is_empty() && cap > 0 {
                let mut end = cap;
                while !t.is_char_boundary(end) {
                    end -= 1;
                }
                if end > 0 {
                    out.push(t[..end].to_string());
                }
            }
            break;
        }
        used = need;
        out.push(t.to_string());
    }
    out
}

const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "of", "to", "in", "and", "on", "for", "with", "at", "by", "from", "as", "is", "was", "that", "it",
    "an", "be", "has",
];
const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Letters-only pseudo-word for index `i`, distinct for distinct `i`.
fn pseudo_word(mut i: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut w = String::new();
    loop {
        let s = i % base;
        w.push_str(ONSETS[s / VOWELS.len()]);
        w.push_str(VOWELS[s % VOWELS.len()]);
        i /= base;
        if i == 0 {
            break;
        }
    }
    w.push('x');
    w
}

/// Function words used as noise by [`synth_corpus`] for a vocabulary size.
pub fn synth_function_words(vocab_size: usize) -> &'static [&'static str] {
    &FUNCTION_WORDS[..FUNCTION_WORDS.len().min(vocab_size / 4)]
}

/// Deterministic toy corpus: each source holds 10 to 20 random content
/// words with function words sprinkled between them; its target is the
/// first `k` content words.
pub fn synth_corpus(seed: u64, n_pairs: usize, vocab_size: usize, k: usize) -> Result<Corpus, TextError> {
    let function = synth_function_words(vocab_size);
    let n_content = vocab_size.saturating_sub(function.len());
    if n_content < 2 {
        return Err(TextError::Invalid(format!("vocabulary size {vocab_size} too small")));
    }
    if k == 0 || k >= 10 {
        return Err(TextError::Invalid(format!("summary length {k} must be in 1..10")));
    }
    let content: Vec<String> = (0..n_content).map(pseudo_word).collect();
    let mut rng = Rng::new(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let len = 10 + rng.below(11);
        let mut source = Vec::new();
        let mut target = Vec::with_capacity(k);
        for c in 0..len {
            let noise = match rng.unit() {
                u if u < 0.45 => 0,
                u if u < 0.85 => 1,
                _ => 2,
            };
            if !function.is_empty() {
                for _ in 0..noise {
                    source.push(function[rng.below(function.len())].to_string());
                }
            }
            let w = content[rng.below(n_content)].clone();
            if c < k {
                target.push(w.clone());
            }
            source.push(w);
        }
        pairs.push(Pair { source, target });
    }
    Ok(Corpus {
        pairs,
        provenance: format!("synthetic seed={seed} pairs={n_pairs} vocab={vocab_size} k={k}"),
    })
}

fn read_utf8(path: &Path) -> Result<String, TextError> {
    let bytes = fs::read(path).map_err(|source| TextError::Io { path: path.to_path_buf(), source })?;
    String::from_utf8(bytes).map_err(|e| {
        let upto = e.utf8_error().valid_up_to();
        let line = e.as_bytes()[..upto].iter().filter(|&&b| b == b'\n').count() + 1;
        TextError::Encoding { path: path.to_path_buf(), line }
    })
}

/// Lines of a UTF-8 text file, without terminators.
pub fn read_lines(path: &Path) -> Result<Vec<String>, TextError> {
    let text = read_utf8(path)?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads two line-aligned files of space-separated tokens.
pub fn load_parallel(src_path: &Path, tgt_path: &Path) -> Result<Corpus, TextError> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(TextError::LineCountMismatch { src: src.len(), tgt: tgt.len() });
    }
    let mut pairs = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
        let source: Vec<String> = s.split_whitespace().map(str::to_string).collect();
        let target: Vec<String> = t.split_whitespace().map(str::to_string).collect();
        if source.is_empty() {
            return Err(TextError::EmptyLine { path: src_path.to_path_buf(), line: i + 1 });
        }
        if target.is_empty() {
            return Err(TextError::EmptyLine { path: tgt_path.to_path_buf(), line: i + 1 });
        }
        pairs.push(Pair { source, target });
    }
    Ok(Corpus { pairs, provenance: format!("{} + {}", src_path.display(), tgt_path.display()) })
}

pub fn save_parallel(corpus: &Corpus, src_path: &Path, tgt_path: &Path) -> Result<(), TextError> {
    let render = |f: fn(&Pair) -> &Vec<String>| {
        corpus.pairs.iter().map(|p| f(p).join(" ") + "\n").collect::<String>()
    };
    let write = |path: &Path, text: String| {
        fs::write(path, text).map_err(|source| TextError::Io { path: path.to_path_buf(), source })
    };
    write(src_path, render(|p| &p.source))?;
    write(tgt_path, render(|p| &p.target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_string).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("IBM 2018"), "ibm ####");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("A  B\tC"), "a b c");
        assert_eq!(normalize("  x\n"), "x");
        // Arabic-Indic and fullwidth digits are decimal digits too
        assert_eq!(normalize("\u{0663}\u{FF17}"), "##");
        assert!(normalize_bytes(&[0x61, 0xff]).is_err());
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("don't stop."), toks("do n't stop ."));
        assert_eq!(tokenize("u.s.-led"), toks("u.s.-led"));
        assert_eq!(tokenize("hello, world"), vec!["hello", ",", "world"]);
        assert_eq!(tokenize("he's (very) \"sure\"!"), toks("he 's ( very ) \" sure \" !"));
        assert_eq!(tokenize("the u.s. won"), toks("the u.s. won"));
        assert_eq!(tokenize("well-known co-op"), toks("well-known co-op"));
    }

    #[test]
    fn vocab_counts_and_ties() {
        let pairs = vec![Pair::new(&["a", "a"], &["b"])];
        let v = build_vocab(&pairs, 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);

        let pairs = vec![Pair::new(&["c", "b"], &["a", "d"])];
        let v = build_vocab(&pairs, 100).unwrap();
        assert_eq!(v.words(), &["a", "b", "c", "d"]);
        assert_eq!(build_vocab(&pairs, 100).unwrap(), v);

        assert!(matches!(build_vocab(&[], 10), Err(TextError::EmptyCorpus)));
        assert!(build_vocab(&pairs, 4).is_err());
    }

    #[test]
    fn vocab_round_trip_and_oov() {
        let v = Vocab::from_tokens(["x", "y"]).unwrap();
        let ids = v.encode(&["y", "zzz", "x"]);
        assert_eq!(ids, vec![5, UNK, 4]);
        assert_eq!(v.decode(&ids), vec!["y", "UNK", "x"]);
        assert_eq!(v.token(PAD), "<pad>");
        assert_eq!(v.token(EOS), "</s>");
    }

    #[test]
    fn filter_examples() {
        let sw = Stopwords::builtin();
        let q = Pair::new(&["who", "won", "?"], &["won"]);
        let disjoint = Pair::new(&["cats", "sleep"], &["dogs", "bark"]);
        let only_stop = Pair::new(&["the", "cats"], &["the", "dogs"]);
        let good = Pair::new(&["the", "cats", "sleep", "all", "day"], &["cats", "sleep"]);
        let kept = filter_pairs(vec![q, disjoint, only_stop, good.clone()], &sw);
        assert_eq!(kept, vec![good]);
    }

    #[test]
    fn truncation_examples() {
        let short = toks("a bb ccc");
        assert_eq!(truncate_to_bytes(&short, 75), short);
        let ten: Vec<String> = (0..9).map(|i| format!("{i}123456789")).collect();
        assert_eq!(truncate_to_bytes(&ten, 75), ten[..6].to_vec());
        assert_eq!(truncate_to_bytes(&["ab"], 1), vec!["a"]);
        assert_eq!(truncate_to_bytes(&["éa"], 1), Vec::<String>::new());
    }

    #[test]
    fn synthetic_corpus_laws() {
        let a = synth_corpus(1, 50, 200, 4).unwrap();
        let b = synth_corpus(1, 50, 200, 4).unwrap();
        assert_eq!(a, b);
        let fw = synth_function_words(200);
        for p in &a.pairs {
            assert_eq!(p.target.len(), 4);
            let content: Vec<&String> = p.source.iter().filter(|t| !fw.contains(&t.as_str())).collect();
            assert!((10..=20).contains(&content.len()));
            assert_eq!(content[..4], p.target.iter().collect::<Vec<_>>()[..]);
            assert_eq!(normalize(&p.source.join(" ")), p.source.join(" "));
        }
        let distinct: HashSet<&String> = a.pairs.iter().flat_map(|p| &p.source).collect();
        assert!(distinct.len() <= 200);
        assert_ne!(synth_corpus(2, 50, 200, 4).unwrap(), a);
    }

    #[test]
    fn pseudo_words_are_distinct_letters() {
        let words: HashSet<String> = (0..5000).map(pseudo_word).collect();
        assert_eq!(words.len(), 5000);
        assert!(words.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn parallel_files() {
        let dir = tempfile::tempdir().unwrap();
        let (s, t) = (dir.path().join("x.src"), dir.path().join("x.tgt"));
        let corpus = synth_corpus(3, 20, 60, 3).unwrap();
        save_parallel(&corpus, &s, &t).unwrap();
        let back = load_parallel(&s, &t).unwrap();
        assert_eq!(back.pairs, corpus.pairs);

        fs::write(&t, "one\n").unwrap();
        assert!(matches!(load_parallel(&s, &t), Err(TextError::LineCountMismatch { .. })));

        fs::write(&s, "").unwrap();
        fs::write(&t, "").unwrap();
        assert!(load_parallel(&s, &t).unwrap().pairs.is_empty());

        fs::write(&s, b"ok\n\xff\n").unwrap();
        fs::write(&t, "a\nb\n").unwrap();
        assert!(matches!(load_parallel(&s, &t), Err(TextError::Encoding { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC*") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn truncation_is_a_bounded_prefix(words in prop::collection::vec("[a-z]{1,12}", 0..20), cap in 1usize..80) {
            let out = truncate_to_bytes(&words, cap);
            prop_assert!(out.join(" ").len() <= cap);
            if out.len() == 1 && words[0].len() > cap {
                prop_assert!(words[0].starts_with(&out[0]));
            } else {
                prop_assert_eq!(&words[..out.len()], &out[..]);
            }
        }

        #[test]
        fn filtering_is_idempotent_and_shrinking(
            raw in prop::collection::vec(("[a-c ?]{1,12}", "[a-c ]{1,8}"), 0..12)
        ) {
            let pairs: Vec<Pair> = raw.iter().map(|(s, t)| Pair {
                source: s.split_whitespace().map(str::to_string).collect(),
                target: t.split_whitespace().map(str::to_string).collect(),
            }).collect();
            let sw = Stopwords::parse("a\n");
            let once = filter_pairs(pairs.clone(), &sw);
            prop_assert!(once.len() <= pairs.len());
            prop_assert_eq!(filter_pairs(once.clone(), &sw), once);
        }
    }
}
