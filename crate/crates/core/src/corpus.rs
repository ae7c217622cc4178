//! Sentences, vocabularies and parallel corpora with per-pair provenance.
//!
//! Monolingual files hold one whitespace-tokenized sentence per line.
//! Parallel files are TSV with exactly three columns:
//! `source \t target \t provenance`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_MARKER: &str = "@trg@";
pub const CONTINUATION: &str = "@@";

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const EOS: usize = 2;
pub const DUMMY: usize = 3;

pub const PAD_STR: &str = "<pad>";
pub const UNK_STR: &str = "<unk>";
pub const EOS_STR: &str = "</s>";
pub const DUMMY_STR: &str = "<dummy>";

const RESERVED: [&str; 4] = [PAD_STR, UNK_STR, EOS_STR, DUMMY_STR];

pub fn is_reserved(surface: &str) -> bool {
    RESERVED.contains(&surface)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    surface: String,
    marked: bool,
}

impl Token {
    /// An unmarked token. Fails on empty input or embedded whitespace.
    pub fn new(surface: impl Into<String>) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(Error::InvalidToken(surface));
        }
        Ok(Token { surface, marked: false })
    }

    /// `marker + surface`, flagged as carrying the target-language marker.
    pub fn marked(surface: &str, marker: &str) -> Result<Self> {
        let mut t = Token::new(format!("{marker}{surface}"))?;
        t.marked = true;
        Ok(t)
    }

    /// Parses a surface string, flagging it as marked when it starts with
    /// `marker`.
    pub fn parse(surface: &str, marker: &str) -> Result<Self> {
        let mut t = Token::new(surface)?;
        t.marked = !marker.is_empty() && surface.starts_with(marker) && surface.len() > marker.len();
        Ok(t)
    }

    pub fn unk() -> Self {
        Token {
            surface: UNK_STR.to_string(),
            marked: false,
        }
    }

    pub fn dummy() -> Self {
        Token {
            surface: DUMMY_STR.to_string(),
            marked: false,
        }
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn is_marked(&self) -> bool {
        self.marked
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence { tokens }
    }

    /// Whitespace tokenization with the default marker.
    pub fn parse(line: &str) -> Result<Self> {
        Self::parse_with_marker(line, DEFAULT_MARKER)
    }

    pub fn parse_with_marker(line: &str, marker: &str) -> Result<Self> {
        let tokens = line
            .split_whitespace()
            .map(|w| Token::parse(w, marker))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sentence { tokens })
    }

    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let tokens = words.iter().map(|w| Token::new(w.as_ref())).collect::<Result<Vec<_>>>()?;
        Ok(Sentence { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(Token::surface)
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.surface())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Corpus { sentences }
    }

    pub fn from_lines<S: AsRef<str>>(lines: &[S]) -> Result<Self> {
        let sentences = lines.iter().map(|l| Sentence::parse(l.as_ref())).collect::<Result<Vec<_>>>()?;
        Ok(Corpus { sentences })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sentence> {
        self.sentences.iter()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

/// Origin of one sentence pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Provenance {
    Natural,
    BackTranslated(String),
    ForwardTranslated(String),
    Copy,
    CopyMarked,
    CopyDummies,
    Noised(Box<Provenance>),
}

impl Provenance {
    /// Wraps a non-noised tag.
    pub fn noised(base: Provenance) -> Result<Self> {
        if matches!(base, Provenance::Noised(_)) {
            return Err(Error::Config("noise cannot wrap an already-noised provenance".into()));
        }
        Ok(Provenance::Noised(Box::new(base)))
    }

    pub fn is_natural(&self) -> bool {
        matches!(self, Provenance::Natural)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Natural => f.write_str("natural"),
            Provenance::BackTranslated(id) => write!(f, "backtrans:{id}"),
            Provenance::ForwardTranslated(id) => write!(f, "fwdtrans:{id}"),
            Provenance::Copy => f.write_str("copy"),
            Provenance::CopyMarked => f.write_str("copy-marked"),
            Provenance::CopyDummies => f.write_str("copy-dummies"),
            Provenance::Noised(base) => write!(f, "noised:{base}"),
        }
    }
}

fn valid_system_id(id: &str) -> bool {
    !id.is_empty() && !id.contains(|c: char| c == '\t' || c == '\n' || c == '\r')
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown provenance tag {s:?}"));
        if let Some(base) = s.strip_prefix("noised:") {
            return Provenance::noised(base.parse()?);
        }
        if let Some(id) = s.strip_prefix("backtrans:") {
            return if valid_system_id(id) { Ok(Provenance::BackTranslated(id.into())) } else { Err(bad()) };
        }
        if let Some(id) = s.strip_prefix("fwdtrans:") {
            return if valid_system_id(id) { Ok(Provenance::ForwardTranslated(id.into())) } else { Err(bad()) };
        }
        match s {
            "natural" => Ok(Provenance::Natural),
            "copy" => Ok(Provenance::Copy),
            "copy-marked" => Ok(Provenance::CopyMarked),
            "copy-dummies" => Ok(Provenance::CopyDummies),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Sentence,
    pub target: Sentence,
    pub provenance: Provenance,
}

impl SentencePair {
    pub fn new(source: Sentence, target: Sentence, provenance: Provenance) -> Self {
        SentencePair {
            source,
            target,
            provenance,
        }
    }

    /// Parses a natural pair from two whitespace-tokenized strings.
    pub fn natural(source: &str, target: &str) -> Result<Self> {
        Ok(SentencePair::new(Sentence::parse(source)?, Sentence::parse(target)?, Provenance::Natural))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>) -> Self {
        ParallelCorpus { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SentencePair> {
        self.pairs.iter()
    }

    pub fn sources(&self) -> Corpus {
        Corpus::new(self.pairs.iter().map(|p| p.source.clone()).collect())
    }

    pub fn targets(&self) -> Corpus {
        Corpus::new(self.pairs.iter().map(|p| p.target.clone()).collect())
    }

    pub fn source_tokens(&self) -> usize {
        self.pairs.iter().map(|p| p.source.len()).sum()
    }

    /// Checks that no pair has an empty side.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            if p.source.is_empty() || p.target.is_empty() {
                return Err(Error::Config(format!("pair {i} has an empty side")));
            }
        }
        Ok(())
    }

    pub fn extend(&mut self, other: ParallelCorpus) {
        self.pairs.extend(other.pairs);
    }
}

/// Token ↔ id bijection with four reserved symbols at fixed ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, usize>,
    marker: String,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    marker: String,
    entries: Vec<String>,
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            marker: v.marker,
            entries: v.entries,
        }
    }
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        if f.entries.len() < RESERVED.len() || f.entries[..RESERVED.len()] != RESERVED {
            return Err(Error::VocabConflict("reserved symbols missing or out of place".into()));
        }
        let mut v = Vocabulary::with_marker(&f.marker);
        v.extend(f.entries[RESERVED.len()..].iter().cloned())?;
        if v.entries.len() != f.entries.len() {
            return Err(Error::VocabConflict("duplicate vocabulary entries".into()));
        }
        Ok(v)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::with_marker(DEFAULT_MARKER)
    }
}

impl Vocabulary {
    pub fn with_marker(marker: &str) -> Self {
        let entries: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = entries.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Vocabulary {
            entries,
            index,
            marker: marker.to_string(),
        }
    }

    /// Builds a vocabulary from token frequencies. Ids are assigned by
    /// descending frequency, ties broken lexicographically.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>, min_freq: usize, marker: &str) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in &s.tokens {
                *counts.entry(t.surface()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_freq.max(1) && !RESERVED.contains(&w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut v = Vocabulary::with_marker(marker);
        for (w, _) in ranked {
            v.push(w.to_string());
        }
        v
    }

    fn push(&mut self, entry: String) -> usize {
        let id = self.entries.len();
        self.index.insert(entry.clone(), id);
        self.entries.push(entry);
        id
    }

    /// Appends entries not already present (set semantics) and returns the
    /// ids of the newly added ones. Entries must be valid tokens, and the
    /// marked namespace may not collide with unmarked entries.
    pub fn extend(&mut self, entries: impl IntoIterator<Item = String>) -> Result<Vec<usize>> {
        let mut added = Vec::new();
        for e in entries {
            Token::new(e.as_str())?;
            if self.index.contains_key(&e) {
                continue;
            }
            added.push(self.push(e));
        }
        Ok(added)
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.len() == RESERVED.len()
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.index.contains_key(surface)
    }

    pub fn get(&self, surface: &str) -> Option<usize> {
        self.index.get(surface).copied()
    }

    /// Id of `surface`, falling back to the bare unit for an unknown
    /// continuation piece (`"re@@"` → id of `"re"`), then to UNK.
    pub fn id(&self, surface: &str) -> usize {
        if let Some(&i) = self.index.get(surface) {
            return i;
        }
        if let Some(bare) = surface.strip_suffix(CONTINUATION) {
            if let Some(&i) = self.index.get(bare) {
                return i;
            }
        }
        UNK
    }

    pub fn token(&self, id: usize) -> &str {
        self.entries.get(id).map_or(UNK_STR, String::as_str)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Token ids of a sentence (no EOS appended).
    pub fn encode(&self, s: &Sentence) -> Vec<usize> {
        s.tokens.iter().map(|t| self.id(t.surface())).collect()
    }

    /// Sentence from ids; stops at the first EOS and drops PAD.
    pub fn decode(&self, ids: &[usize]) -> Sentence {
        let tokens = ids
            .iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD)
            .map(|&i| Token::parse(self.token(i), &self.marker).expect("vocabulary entries are valid tokens"))
            .collect();
        Sentence { tokens }
    }

    /// SHA-256 over the entry list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.marker.as_bytes());
        h.update([0]);
        for e in &self.entries {
            h.update(e.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// How [`load_corpus`] obtains its vocabulary.
#[derive(Debug, Clone)]
pub enum VocabSource {
    Build { min_freq: usize, marker: String },
    Fixed(Vocabulary),
}

impl VocabSource {
    pub fn build() -> Self {
        VocabSource::Build {
            min_freq: 1,
            marker: DEFAULT_MARKER.to_string(),
        }
    }
}

/// Reads a one-sentence-per-line file.
pub fn read_corpus(path: &Path, marker: &str) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    let lines: Vec<&str> = text.split('\n').collect();
    let n = if text.ends_with('\n') { lines.len() - 1 } else { lines.len() };
    if text.is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }
    for (i, line) in lines[..n].iter().enumerate() {
        let s = Sentence::parse_with_marker(line, marker).map_err(|e| Error::Format {
            path: path.into(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if s.is_empty() {
            return Err(Error::Format {
                path: path.into(),
                line: i + 1,
                reason: "line has no tokens".into(),
            });
        }
        sentences.push(s);
    }
    Ok(Corpus { sentences })
}

/// Reads system output: like [`read_corpus`] but empty lines are kept as
/// empty sentences.
pub fn read_hypotheses(path: &Path, marker: &str) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sentences = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            Sentence::parse_with_marker(line, marker).map_err(|e| Error::Format {
                path: path.into(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Corpus { sentences })
}

pub fn load_corpus(path: &Path, vocab: VocabSource) -> Result<(Corpus, Vocabulary)> {
    match vocab {
        VocabSource::Build { min_freq, marker } => {
            let corpus = read_corpus(path, &marker)?;
            let v = Vocabulary::build(&corpus.sentences, min_freq, &marker);
            Ok((corpus, v))
        }
        VocabSource::Fixed(v) => {
            let corpus = read_corpus(path, v.marker())?;
            Ok((corpus, v))
        }
    }
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for s in &corpus.sentences {
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_parallel(corpus: &ParallelCorpus, path: &Path) -> Result<()> {
    corpus.validate()?;
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for p in &corpus.pairs {
        writeln!(w, "{}\t{}\t{}", p.source, p.target, p.provenance).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_parallel(path: &Path) -> Result<ParallelCorpus> {
    load_parallel_with_marker(path, DEFAULT_MARKER)
}

pub fn load_parallel_with_marker(path: &Path, marker: &str) -> Result<ParallelCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    let fail = |line: usize, reason: String| Error::Format {
        path: path.into(),
        line,
        reason,
    };
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(fail(i + 1, format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        let source = Sentence::parse_with_marker(cols[0], marker).map_err(|e| fail(i + 1, e.to_string()))?;
        let target = Sentence::parse_with_marker(cols[1], marker).map_err(|e| fail(i + 1, e.to_string()))?;
        if source.is_empty() || target.is_empty() {
            return Err(fail(i + 1, "empty side".into()));
        }
        let provenance = cols[2].parse().map_err(|e: Error| fail(i + 1, e.to_string()))?;
        pairs.push(SentencePair {
            source,
            target,
            provenance,
        });
    }
    Ok(ParallelCorpus { pairs })
}

/// Shuffled union of `in_domain` with an equally sized uniform sample
/// (without replacement) of `out_domain`.
pub fn mix_equal(in_domain: &ParallelCorpus, out_domain: &ParallelCorpus, seed: u64) -> Result<ParallelCorpus> {
    let n = in_domain.len();
    if out_domain.len() < n {
        return Err(Error::OutDomainTooSmall {
            needed: n,
            available: out_domain.len(),
        });
    }
    let mut r = rng::rng(seed);
    let picked = rand::seq::index::sample(&mut r, out_domain.len(), n);
    let mut pairs: Vec<SentencePair> = in_domain.pairs.clone();
    pairs.extend(picked.into_iter().map(|i| out_domain.pairs[i].clone()));
    pairs.shuffle(&mut r);
    Ok(ParallelCorpus { pairs })
}
