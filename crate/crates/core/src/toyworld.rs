//! Synthetic two-domain translation world used in place of real corpora.
//!
//! Source sentences come from a small grammar over a seeded lexicon. The
//! target side is produced by word substitution with fertility (split
//! nouns, auxiliary verbs, a dropped determiner), post-nominal adjectives
//! for a fixed subset of adjectives, and, with some probability, a swap of
//! the two clauses of a coordinated sentence. Gold alignments are kept.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::Alignment;
use crate::corpus::{save_corpus, save_parallel, Corpus, ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::rng;
use crate::synth::{ErrorKind, ReorderRule, RuleTranslator, Translator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyWorldSpec {
    pub seed: u64,
    pub out_train: usize,
    pub in_mono: usize,
    pub dev: usize,
    pub test: usize,
    pub nouns: usize,
    pub adjectives: usize,
    pub verbs: usize,
    /// Names per domain; identical on both sides.
    pub names: usize,
    /// Share of each content category owned by a single domain (split
    /// evenly between the two).
    pub domain_only_fraction: f64,
    /// Probability that an adjective is post-nominal in the target.
    pub reorder_rate: f64,
    /// Probability that a two-clause sentence swaps its clauses.
    pub free_reorder_rate: f64,
    /// Probability that a noun or verb has two target words.
    pub fertility_rate: f64,
    pub zipf_exponent: f64,
}

impl Default for ToyWorldSpec {
    fn default() -> Self {
        ToyWorldSpec {
            seed: 1,
            out_train: 3000,
            in_mono: 1500,
            dev: 200,
            test: 200,
            nouns: 48,
            adjectives: 20,
            verbs: 30,
            names: 10,
            domain_only_fraction: 0.5,
            reorder_rate: 0.5,
            free_reorder_rate: 0.2,
            fertility_rate: 0.15,
            zipf_exponent: 1.0,
        }
    }
}

impl ToyWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if [self.out_train, self.in_mono, self.dev, self.test, self.nouns, self.adjectives, self.verbs].contains(&0) {
            return Err(Error::Config("toy world sizes must be positive".into()));
        }
        for (name, p) in [
            ("domain_only_fraction", self.domain_only_fraction),
            ("reorder_rate", self.reorder_rate),
            ("free_reorder_rate", self.free_reorder_rate),
            ("fertility_rate", self.fertility_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Det,
    Prep,
    Conj,
    Noun,
    Adj,
    Verb,
    Name,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub category: Category,
    pub target: Vec<String>,
    /// Adjective placed after its noun in the target.
    pub post_nominal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Out,
    In,
}

/// Weighted content words of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DomainLexicon {
    nouns: Vec<String>,
    adjectives: Vec<String>,
    verbs: Vec<String>,
    names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entries: BTreeMap<String, Entry>,
    dets: Vec<String>,
    preps: Vec<String>,
    conjs: Vec<String>,
    out_domain: DomainLexicon,
    in_domain: DomainLexicon,
}

const SRC_CONSONANTS: &[u8] = b"ptkmnsl";
const TGT_CONSONANTS: &[u8] = b"bdgfrvz";
const VOWELS: &[u8] = b"aeiou";

struct WordMaker {
    used: BTreeSet<String>,
}

impl WordMaker {
    fn make(&mut self, r: &mut ChaCha8Rng, consonants: &[u8], syllables: usize, capital: bool) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(consonants[r.gen_range(0..consonants.len())] as char);
                w.push(VOWELS[r.gen_range(0..VOWELS.len())] as char);
            }
            if capital {
                w[..1].make_ascii_uppercase();
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

impl Lexicon {
    fn build(spec: &ToyWorldSpec) -> Self {
        let mut r = rng::rng(rng::derive_named(spec.seed, "toyworld-lexicon"));
        let mut wm = WordMaker { used: BTreeSet::new() };
        let mut entries = BTreeMap::new();
        let func = |wm: &mut WordMaker, r: &mut ChaCha8Rng, cat: Category, n: usize, entries: &mut BTreeMap<String, Entry>| {
            (0..n)
                .map(|i| {
                    let s = wm.make(r, SRC_CONSONANTS, 1, false);
                    // The first determiner has no target counterpart.
                    let target = if cat == Category::Det && i == 0 { vec![] } else { vec![wm.make(r, TGT_CONSONANTS, 1, false)] };
                    entries.insert(s.clone(), Entry { category: cat, target, post_nominal: false });
                    s
                })
                .collect::<Vec<_>>()
        };
        let dets = func(&mut wm, &mut r, Category::Det, 3, &mut entries);
        let preps = func(&mut wm, &mut r, Category::Prep, 4, &mut entries);
        let conjs = func(&mut wm, &mut r, Category::Conj, 2, &mut entries);
        let aux = wm.make(&mut r, TGT_CONSONANTS, 1, false);

        let content = |wm: &mut WordMaker, r: &mut ChaCha8Rng, cat: Category, n: usize, entries: &mut BTreeMap<String, Entry>| {
            (0..n)
                .map(|_| {
                    let syl = r.gen_range(2..=3);
                    let s = wm.make(r, SRC_CONSONANTS, syl, false);
                    let split = matches!(cat, Category::Noun | Category::Verb) && r.gen::<f64>() < spec.fertility_rate;
                    let mut target = vec![];
                    if split && cat == Category::Verb {
                        target.push(aux.clone());
                    }
                    let syl = r.gen_range(2..=3);
                    target.push(wm.make(r, TGT_CONSONANTS, syl, false));
                    if split && cat == Category::Noun {
                        target.push(wm.make(r, TGT_CONSONANTS, 2, false));
                    }
                    let post_nominal = cat == Category::Adj && r.gen::<f64>() < spec.reorder_rate;
                    entries.insert(s.clone(), Entry { category: cat, target, post_nominal });
                    s
                })
                .collect::<Vec<_>>()
        };
        let nouns = content(&mut wm, &mut r, Category::Noun, spec.nouns, &mut entries);
        let adjectives = content(&mut wm, &mut r, Category::Adj, spec.adjectives, &mut entries);
        let verbs = content(&mut wm, &mut r, Category::Verb, spec.verbs, &mut entries);
        let mut names = Vec::new();
        for _ in 0..2 * spec.names {
            let n = wm.make(&mut r, SRC_CONSONANTS, 2, true);
            entries.insert(n.clone(), Entry { category: Category::Name, target: vec![n.clone()], post_nominal: false });
            names.push(n);
        }

        let split = |words: &[String], r: &mut ChaCha8Rng| -> (Vec<String>, Vec<String>) {
            let only = ((words.len() as f64 * spec.domain_only_fraction) / 2.0).round() as usize;
            let out_only = &words[..only];
            let in_only = &words[only..2 * only];
            let shared = &words[2 * only..];
            let mut out: Vec<String> = shared.iter().chain(out_only).cloned().collect();
            let mut inn: Vec<String> = shared.iter().chain(in_only).cloned().collect();
            // Separate frequency rankings per domain.
            out.shuffle(r);
            inn.shuffle(r);
            (out, inn)
        };
        let (on, inn) = split(&nouns, &mut r);
        let (oa, ia) = split(&adjectives, &mut r);
        let (ov, iv) = split(&verbs, &mut r);
        Lexicon {
            entries,
            dets,
            preps,
            conjs,
            out_domain: DomainLexicon {
                nouns: on,
                adjectives: oa,
                verbs: ov,
                names: names[..spec.names].to_vec(),
            },
            in_domain: DomainLexicon {
                nouns: inn,
                adjectives: ia,
                verbs: iv,
                names: names[spec.names..].to_vec(),
            },
        }
    }

    fn domain(&self, d: Domain) -> &DomainLexicon {
        match d {
            Domain::Out => &self.out_domain,
            Domain::In => &self.in_domain,
        }
    }

    pub fn target_of(&self, source: &str) -> Option<&Entry> {
        self.entries.get(source)
    }
}

fn zipf_pick<'a>(words: &'a [String], s: f64, r: &mut ChaCha8Rng) -> &'a str {
    let total: f64 = (1..=words.len()).map(|k| (k as f64).powf(-s)).sum();
    let mut u = r.gen::<f64>() * total;
    for (k, w) in words.iter().enumerate() {
        u -= ((k + 1) as f64).powf(-s);
        if u <= 0.0 {
            return w;
        }
    }
    words.last().expect("non-empty lexicon")
}

struct Generator<'a> {
    lex: &'a Lexicon,
    spec: &'a ToyWorldSpec,
    domain: Domain,
}

/// Source words of one noun phrase with the index of its head noun.
struct Phrase {
    words: Vec<String>,
}

impl Generator<'_> {
    fn noun_phrase(&self, r: &mut ChaCha8Rng, depth: usize) -> Phrase {
        let d = self.lex.domain(self.domain);
        if !d.names.is_empty() && r.gen::<f64>() < 0.12 {
            return Phrase { words: vec![d.names.choose(r).expect("names").clone()] };
        }
        let mut words = vec![self.lex.dets.choose(r).expect("dets").clone()];
        let n_adj = if r.gen::<f64>() < 0.5 { if r.gen::<f64>() < 0.3 { 2 } else { 1 } } else { 0 };
        for _ in 0..n_adj {
            words.push(zipf_pick(&d.adjectives, self.spec.zipf_exponent, r).to_string());
        }
        words.push(zipf_pick(&d.nouns, self.spec.zipf_exponent, r).to_string());
        if depth == 0 && r.gen::<f64>() < 0.25 {
            words.push(self.lex.preps.choose(r).expect("preps").clone());
            words.extend(self.noun_phrase(r, depth + 1).words);
        }
        Phrase { words }
    }

    fn clause(&self, r: &mut ChaCha8Rng) -> Vec<String> {
        let d = self.lex.domain(self.domain);
        let mut w = self.noun_phrase(r, 0).words;
        w.push(zipf_pick(&d.verbs, self.spec.zipf_exponent, r).to_string());
        w.extend(self.noun_phrase(r, 0).words);
        w
    }

    /// Source clauses (one or two) and the conjunction between them.
    fn sentence(&self, r: &mut ChaCha8Rng) -> (Vec<Vec<String>>, Option<String>) {
        if r.gen::<f64>() < 0.3 {
            let a = self.clause(r);
            let b = self.clause(r);
            (vec![a, b], Some(self.lex.conjs.choose(r).expect("conjs").clone()))
        } else {
            (vec![self.clause(r)], None)
        }
    }
}

/// Target words of one clause with the source position of each, given
/// the clause's offset in the source sentence.
fn translate_clause(lex: &Lexicon, clause: &[String], offset: usize) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    let mut pending_post: Vec<usize> = Vec::new();
    for (i, w) in clause.iter().enumerate() {
        let e = &lex.entries[w];
        match e.category {
            Category::Adj if e.post_nominal => pending_post.push(i),
            _ => {
                out.extend(e.target.iter().map(|t| (t.clone(), offset + i)));
                if e.category == Category::Noun {
                    for &j in &pending_post {
                        out.extend(lex.entries[&clause[j]].target.iter().map(|t| (t.clone(), offset + j)));
                    }
                    pending_post.clear();
                }
            }
        }
    }
    out
}

/// A generated pair with its gold alignment.
fn generate_pair(g: &Generator, r: &mut ChaCha8Rng) -> (SentencePair, Alignment) {
    let (clauses, conj) = g.sentence(r);
    let mut src: Vec<String> = Vec::new();
    let mut parts: Vec<Vec<(String, usize)>> = Vec::new();
    for (k, c) in clauses.iter().enumerate() {
        if k == 1 {
            src.push(conj.clone().expect("two clauses have a conjunction"));
        }
        parts.push(translate_clause(g.lex, c, src.len()));
        src.extend(c.iter().cloned());
    }
    let mut tgt: Vec<(String, usize)> = Vec::new();
    if let Some(conj) = &conj {
        let conj_pos = clauses[0].len();
        let conj_t: Vec<(String, usize)> = g.lex.entries[conj].target.iter().map(|t| (t.clone(), conj_pos)).collect();
        if r.gen::<f64>() < g.spec.free_reorder_rate {
            parts.swap(0, 1);
        }
        tgt.extend(parts[0].iter().cloned());
        tgt.extend(conj_t);
        tgt.extend(parts[1].iter().cloned());
    } else {
        tgt.extend(parts[0].iter().cloned());
    }
    let links = tgt.iter().enumerate().map(|(j, (_, i))| (*i, j)).collect();
    let pair = SentencePair::natural(&src.join(" "), &tgt.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ")).expect("generated words are valid tokens");
    (pair, Alignment { links })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBundle {
    pub spec: ToyWorldSpec,
    pub lexicon: Lexicon,
    pub out_train: ParallelCorpus,
    pub out_train_alignments: Vec<Alignment>,
    pub out_dev: ParallelCorpus,
    pub out_test: ParallelCorpus,
    /// Gold pairs behind the in-domain monolingual target data.
    pub in_natural: ParallelCorpus,
    pub in_natural_alignments: Vec<Alignment>,
    pub in_mono: Corpus,
    /// In-domain source sentences unrelated to `in_mono`, for forward
    /// translation.
    pub in_src_mono: Corpus,
    pub in_dev: ParallelCorpus,
    pub in_test: ParallelCorpus,
}

fn sample(g: &Generator, n: usize, seed: u64, label: &str) -> (ParallelCorpus, Vec<Alignment>) {
    let mut r = rng::rng(rng::derive_named(seed, label));
    let (pairs, al): (Vec<_>, Vec<_>) = (0..n).map(|_| generate_pair(g, &mut r)).unzip();
    (ParallelCorpus::new(pairs), al)
}

/// Builds the lexicon and all data splits from `spec`.
pub fn make_toy_world(spec: &ToyWorldSpec) -> Result<ToyBundle> {
    spec.validate()?;
    let lexicon = Lexicon::build(spec);
    let out = Generator { lex: &lexicon, spec, domain: Domain::Out };
    let inn = Generator { lex: &lexicon, spec, domain: Domain::In };
    let (out_train, out_train_alignments) = sample(&out, spec.out_train, spec.seed, "out-train");
    let out_dev = sample(&out, spec.dev, spec.seed, "out-dev").0;
    let out_test = sample(&out, spec.test, spec.seed, "out-test").0;
    let (in_natural, in_natural_alignments) = sample(&inn, spec.in_mono, spec.seed, "in-mono");
    let in_src_mono = sample(&inn, spec.in_mono, spec.seed, "in-src-mono").0.sources();
    let in_dev = sample(&inn, spec.dev, spec.seed, "in-dev").0;
    let in_test = sample(&inn, spec.test, spec.seed, "in-test").0;
    Ok(ToyBundle {
        spec: spec.clone(),
        in_mono: in_natural.targets(),
        lexicon,
        out_train,
        out_train_alignments,
        out_dev,
        out_test,
        in_natural,
        in_natural_alignments,
        in_src_mono,
        in_dev,
        in_test,
    })
}

impl ToyBundle {
    /// Monotone rule-based target→source translator that knows the whole
    /// lexicon. Split nouns keep their first part; auxiliaries vanish.
    pub fn back_translator(&self) -> RuleTranslator {
        let mut table: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (s, e) in &self.lexicon.entries {
            for (k, t) in e.target.iter().enumerate() {
                let out = match e.category {
                    Category::Verb if e.target.len() == 2 && k == 0 => vec![],
                    Category::Noun if k == 1 => vec![],
                    _ => vec![s.clone()],
                };
                table.entry(t.clone()).or_insert(out);
            }
        }
        RuleTranslator {
            id: "toy-bt".into(),
            table,
            reorder: Vec::new(),
        }
    }

    /// Rule-based source→target translator with adjective reordering for
    /// adjacent adjective–noun pairs.
    pub fn forward_translator(&self) -> RuleTranslator {
        let mut table = BTreeMap::new();
        let (mut left, mut right) = (BTreeSet::new(), BTreeSet::new());
        for (s, e) in &self.lexicon.entries {
            table.insert(s.clone(), e.target.clone());
            if e.post_nominal {
                left.insert(s.clone());
            }
            if e.category == Category::Noun {
                right.insert(s.clone());
            }
        }
        RuleTranslator {
            id: "toy-ft".into(),
            table,
            reorder: vec![ReorderRule { left, right }],
        }
    }

    /// Back-translation systems of two qualities: `good` is the monotone rule
    /// translator, `bad` replaces a share of its output words by UNK.
    pub fn bt_system(&self, good: bool, seed: u64) -> Translator {
        let base = Translator::RuleBased(self.back_translator());
        if good {
            base
        } else {
            Translator::degraded("toy-bt-bad", base, 0.3, ErrorKind::Unk, seed).expect("valid rate")
        }
    }

    /// Writes every split plus translators and the spec; returns the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for (name, c) in [
            ("out.train.tsv", &self.out_train),
            ("out.dev.tsv", &self.out_dev),
            ("out.test.tsv", &self.out_test),
            ("in.natural.tsv", &self.in_natural),
            ("in.dev.tsv", &self.in_dev),
            ("in.test.tsv", &self.in_test),
        ] {
            let p = dir.join(name);
            save_parallel(c, &p)?;
            paths.push(p);
        }
        for (name, c) in [("in.mono.tgt", &self.in_mono), ("in.mono.src", &self.in_src_mono)] {
            let p = dir.join(name);
            save_corpus(c, &p)?;
            paths.push(p);
        }
        let p = dir.join("out.train.align");
        let text: String = self.out_train_alignments.iter().map(|a| format!("{a}\n")).collect();
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
        let bt = dir.join("bt.rules.json");
        self.back_translator().save(&bt)?;
        paths.push(bt);
        let ft = dir.join("ft.rules.json");
        self.forward_translator().save(&ft)?;
        paths.push(ft);
        let sp = dir.join("toyworld.json");
        fs::write(&sp, serde_json::to_string_pretty(&self.spec)?).map_err(|e| Error::io(&sp, e))?;
        paths.push(sp);
        Ok(paths)
    }
}

/// A toy language-modelling task in which each target word is determined
/// by the previous one while the source carries only part of the content:
/// sources are the targets with every other word replaced by a dummy.
pub fn history_task(n: usize, types: usize, seed: u64) -> ParallelCorpus {
    let mut r = rng::rng(seed);
    let words: Vec<String> = (0..types).map(|i| format!("h{i}")).collect();
    // Fixed successor table.
    let succ: Vec<usize> = (0..types).map(|_| r.gen_range(0..types)).collect();
    let pairs = (0..n)
        .map(|_| {
            let len = r.gen_range(4..10);
            let mut w = r.gen_range(0..types);
            let mut tgt = Vec::with_capacity(len);
            for _ in 0..len {
                tgt.push(words[w].clone());
                w = succ[w];
            }
            let src: Vec<String> = tgt.iter().enumerate().map(|(i, t)| if i % 2 == 0 { t.clone() } else { crate::corpus::DUMMY_STR.to_string() }).collect();
            SentencePair::natural(&src.join(" "), &tgt.join(" ")).expect("valid words")
        })
        .collect();
    ParallelCorpus::new(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::kendall_tau_distance;

    fn small() -> ToyWorldSpec {
        ToyWorldSpec {
            out_train: 200,
            in_mono: 100,
            dev: 20,
            test: 20,
            ..ToyWorldSpec::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(make_toy_world(&small()).unwrap(), make_toy_world(&small()).unwrap());
    }

    #[test]
    fn no_reordering_means_monotone_gold() {
        let spec = ToyWorldSpec {
            reorder_rate: 0.0,
            free_reorder_rate: 0.0,
            ..small()
        };
        let b = make_toy_world(&spec).unwrap();
        assert!(b.out_train_alignments.iter().all(|a| kendall_tau_distance(a) == 0.0));
        let b2 = make_toy_world(&small()).unwrap();
        assert!(b2.out_train_alignments.iter().any(|a| kendall_tau_distance(a) > 0.0));
    }

    #[test]
    fn gold_links_are_in_bounds() {
        let b = make_toy_world(&small()).unwrap();
        for (p, a) in b.out_train.iter().zip(&b.out_train_alignments) {
            assert!(a.links.iter().all(|&(i, j)| i < p.source.len() && j < p.target.len()));
            let mut t: Vec<usize> = a.links.iter().map(|l| l.1).collect();
            t.dedup();
            assert_eq!(t.len(), p.target.len());
        }
    }

    #[test]
    fn back_translation_is_monotone_and_not_longer() {
        let b = make_toy_world(&small()).unwrap();
        let bt = b.back_translator();
        for p in b.in_natural.iter() {
            let s = bt.translate(&p.target);
            assert!(s.len() <= p.source.len());
            assert!(s.words().all(|w| w != crate::corpus::UNK_STR));
        }
    }

    #[test]
    fn forward_rules_match_gold_without_free_reordering() {
        let spec = ToyWorldSpec {
            free_reorder_rate: 0.0,
            ..small()
        };
        let b = make_toy_world(&spec).unwrap();
        let ft = b.forward_translator();
        let single_adj = b.out_train.iter().filter(|p| {
            p.source.words().filter(|w| b.lexicon.entries[*w].category == Category::Adj).count() <= 1
        });
        for p in single_adj {
            assert_eq!(ft.translate(&p.source), p.target);
        }
    }
}
