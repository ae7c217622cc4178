//! Corpus BLEU and result tables.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    #[default]
    None,
    /// A zero n-gram match count becomes (0 + 1) / (total + 1).
    AddOneOnZero,
}

impl std::str::FromStr for Smoothing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Smoothing::None),
            "add-one-on-zero" | "add-one" => Ok(Smoothing::AddOneOnZero),
            other => Err(Error::Config(format!("unknown smoothing {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuResult {
    /// 0–100.
    pub score: f64,
    /// Modified n-gram precisions (fractions, after smoothing).
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

impl fmt::Display for BleuResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BLEU = {:.2} {:.1}/{:.1}/{:.1}/{:.1} (BP = {:.3} hyp_len = {} ref_len = {})",
            self.score,
            100.0 * self.precisions[0],
            100.0 * self.precisions[1],
            100.0 * self.precisions[2],
            100.0 * self.precisions[3],
            self.brevity_penalty,
            self.hyp_len,
            self.ref_len
        )
    }
}

fn ngram_counts<'b>(words: &'b [&'b str], n: usize) -> HashMap<&'b [&'b str], usize> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped match and total counts for one sentence pair.
fn sentence_stats(hyp: &Sentence, reference: &Sentence) -> ([usize; MAX_ORDER], [usize; MAX_ORDER]) {
    let h: Vec<&str> = hyp.words().collect();
    let r: Vec<&str> = reference.words().collect();
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let hc = ngram_counts(&h, n);
        let rc = ngram_counts(&r, n);
        matches[n - 1] = hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
        totals[n - 1] = h.len().saturating_sub(n - 1);
    }
    (matches, totals)
}

/// Corpus-level BLEU with clipped n-gram precision up to 4-grams and the
/// standard brevity penalty.
pub fn corpus_bleu(hypotheses: &Corpus, references: &Corpus, smoothing: Smoothing) -> Result<BleuResult> {
    if hypotheses.len() != references.len() {
        return Err(Error::SizeMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references.iter()) {
        let (m, t) = sentence_stats(h, r);
        for n in 0..MAX_ORDER {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        hyp_len += h.len();
        ref_len += r.len();
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = match (matches[n], smoothing) {
            (0, Smoothing::AddOneOnZero) => 1.0 / (totals[n] + 1) as f64,
            (0, Smoothing::None) => 0.0,
            (m, _) => m as f64 / totals[n] as f64,
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.iter().any(|&p| p <= 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuResult {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        matches,
        totals,
    })
}

/// A rendered results table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultTable {
    pub tsv: String,
    pub text: String,
}

/// One row per run, one column per test set (sorted by name). Missing
/// cells are shown as `-`.
pub fn result_table(runs: &[(String, Vec<(String, BleuResult)>)]) -> ResultTable {
    let columns: BTreeSet<&str> = runs.iter().flat_map(|(_, r)| r.iter().map(|(t, _)| t.as_str())).collect();
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("system".to_string()).chain(columns.iter().map(|c| c.to_string())).collect()];
    for (name, results) in runs {
        let mut row = vec![name.clone()];
        for c in &columns {
            row.push(
                results
                    .iter()
                    .find(|(t, _)| t == c)
                    .map_or_else(|| "-".to_string(), |(_, b)| format!("{:.2}", b.score)),
            );
        }
        rows.push(row);
    }
    let tsv: String = rows.iter().map(|r| r.join("\t") + "\n").collect();
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        text.push_str(cells.join("  ").trim_end());
        text.push('\n');
    }
    ResultTable { tsv, text }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(lines: &[&str]) -> Corpus {
        Corpus::from_lines(lines).unwrap()
    }

    #[test]
    fn identical_is_100() {
        let h = c(&["the cat sat on the mat", "a b c d e"]);
        assert_eq!(corpus_bleu(&h, &h, Smoothing::None).unwrap().score, 100.0);
    }

    #[test]
    fn unigram_clipping() {
        let r = corpus_bleu(&c(&["the the the the"]), &c(&["the cat"]), Smoothing::None).unwrap();
        assert_eq!((r.matches[0], r.totals[0]), (1, 4));
        let r2 = corpus_bleu(&c(&["the the the the"]), &c(&["the cat the"]), Smoothing::None).unwrap();
        assert_eq!((r2.matches[0], r2.totals[0]), (2, 4));
        assert_eq!(r.score, 0.0);
        let s = corpus_bleu(&c(&["the the the the"]), &c(&["the cat"]), Smoothing::AddOneOnZero).unwrap();
        assert!(s.score > 0.0);
        assert_eq!(s.precisions[1], 1.0 / 4.0);
    }

    #[test]
    fn brevity_penalty_applies_to_short_output() {
        let r = corpus_bleu(&c(&["a b c d"]), &c(&["a b c d e f g h"]), Smoothing::None).unwrap();
        assert!((r.brevity_penalty - (1.0f64 - 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(corpus_bleu(&c(&["a"]), &c(&["a", "b"]), Smoothing::None), Err(Error::SizeMismatch { .. })));
        assert!(matches!(corpus_bleu(&Corpus::default(), &Corpus::default(), Smoothing::None), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn table_layout() {
        let b = corpus_bleu(&c(&["a b c d"]), &c(&["a b c d"]), Smoothing::None).unwrap();
        let runs = vec![("base".to_string(), vec![("in".to_string(), b.clone())]), ("copy".to_string(), vec![("out".to_string(), b)])];
        let t = result_table(&runs);
        assert_eq!(t.tsv, "system\tin\tout\nbase\t100.00\t-\ncopy\t-\t100.00\n");
        assert_eq!(t, result_table(&runs));
        let one = result_table(&runs[..1]);
        assert_eq!(one.tsv.lines().count(), 2);
    }
}
