//! Length-normalised beam search over any step-wise decoder.

use std::cmp::Ordering;

use super::layers::SeqMask;
use super::model::{Encoded, Model};
use crate::corpus::EOS;
use crate::error::Result;
use crate::tensor::{Bound, Graph, Var};

/// Exponent applied to the hypothesis length when comparing finished
/// hypotheses.
pub const LENGTH_ALPHA: f64 = 1.0;

/// A decoder that can be advanced one token at a time for a batch of
/// hypotheses sharing one source sentence.
pub(crate) trait StepModel {
    type State: Clone;

    /// Encodes the source; the returned state has one row.
    fn start(&self, g: &mut Graph, src: &[usize]) -> Result<Self::State>;
    /// Feeds the previous token of every row; returns the new state and
    /// `[rows, V]` logits.
    fn advance(&self, g: &mut Graph, state: &Self::State, prev: &[usize]) -> Result<(Self::State, Var)>;
    /// Keeps (and duplicates) rows of the state.
    fn select(&self, g: &mut Graph, state: &Self::State, rows: &[usize]) -> Result<Self::State>;
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Beam search; returns target ids without EOS, at most `max_len` of them.
pub(crate) fn search<M: StepModel>(m: &M, src: &[usize], beam: usize, max_len: usize, alpha: f64) -> Result<Vec<usize>> {
    let beam = beam.max(1);
    let mut g = Graph::new();
    let mut state = m.start(&mut g, src)?;
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    for _ in 0..max_len {
        let prev: Vec<usize> = live.iter().map(|(t, _)| t.last().copied().unwrap_or(EOS)).collect();
        let (next, logits) = m.advance(&mut g, &state, &prev)?;
        let lv = g.value(logits);
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * lv.cols());
        for (k, (_, score)) in live.iter().enumerate() {
            for (w, lp) in log_softmax(lv.row(k)).into_iter().enumerate() {
                cands.push((score + lp, k, w));
            }
        }
        // Highest score first; ties by hypothesis then token for determinism.
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beam - finished.len());
        let mut new_live = Vec::new();
        let mut parents = Vec::new();
        for (score, k, w) in cands {
            let mut toks = live[k].0.clone();
            if w == EOS {
                finished.push((toks, score));
            } else {
                toks.push(w);
                new_live.push((toks, score));
                parents.push(k);
            }
        }
        if finished.len() >= beam || new_live.is_empty() {
            live.clear();
            break;
        }
        state = m.select(&mut g, &next, &parents)?;
        live = new_live;
    }
    // Hypotheses cut off by the length cap compete without an EOS.
    let cut: Vec<(Vec<usize>, f64, usize)> = live.into_iter().map(|(t, s)| {
        let n = t.len();
        (t, s, n)
    }).collect();
    let all = finished
        .into_iter()
        .map(|(t, s)| {
            let n = t.len() + 1;
            (t, s, n)
        })
        .chain(cut);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (t, s, n) in all {
        let norm = s / (n.max(1) as f64).powf(alpha);
        if best.as_ref().is_none_or(|(_, b)| norm > *b) {
            best = Some((t, norm));
        }
    }
    Ok(best.map(|b| b.0).unwrap_or_default())
}

/// Greedy argmax decoding, written independently of [`search`].
pub(crate) fn greedy<M: StepModel>(m: &M, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let mut state = m.start(&mut g, src)?;
    let mut out = Vec::new();
    let mut prev = EOS;
    while out.len() < max_len {
        let (next, logits) = m.advance(&mut g, &state, &[prev])?;
        let row = g.value(logits).row(0);
        let mut arg = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[arg] {
                arg = i;
            }
        }
        if arg == EOS {
            break;
        }
        out.push(arg);
        prev = arg;
        state = next;
    }
    Ok(out)
}

#[derive(Clone)]
pub(crate) struct ModelState {
    pub bound: Bound,
    /// One-row encoding of the source.
    pub base: Encoded,
    pub enc: Encoded,
    pub s: Var,
}

/// Repeats a one-row encoding `n` times.
pub(crate) fn expand(g: &mut Graph, base: &Encoded, n: usize) -> Result<Encoded> {
    let rep = |g: &mut Graph, v: Var| -> Result<Var> {
        let shape = g.value(v).shape().to_vec();
        let flat = g.reshape(v, &[1, shape[1..].iter().product()])?;
        let rows = g.gather_rows(flat, &vec![0; n])?;
        let mut s = shape;
        s[0] = n;
        g.reshape(rows, &s)
    };
    let h = rep(g, base.h)?;
    let uh = rep(g, base.uh)?;
    let mask_add = rep(g, base.mask_add)?;
    Ok(Encoded {
        h,
        uh,
        mask_add,
        mask: SeqMask {
            lens: vec![base.mask.lens[0]; n],
            width: base.mask.width,
        },
    })
}

impl Model {
    pub(crate) fn start_state(&self, g: &mut Graph, src: &[usize]) -> Result<ModelState> {
        let bound = self.params.bind_frozen(g);
        let batch = super::layers::PaddedBatch::with_eos(&[src]);
        let base = self.encode(g, &bound, &batch)?;
        let s = self.init_state(g, &bound, &base)?;
        Ok(ModelState {
            bound,
            enc: base.clone(),
            base,
            s,
        })
    }

    /// Returns the new state and the `[rows,E]` readout.
    pub(crate) fn advance_state(&self, g: &mut Graph, st: &ModelState, prev: &[usize]) -> Result<(ModelState, Var)> {
        let (yg, yo) = self.embed_prev(g, &st.bound, prev)?;
        let (s, r) = self.step(g, &st.bound, &st.enc, st.s, yg, yo)?;
        Ok((ModelState { s, ..st.clone() }, r))
    }

    pub(crate) fn select_state(&self, g: &mut Graph, st: &ModelState, rows: &[usize]) -> Result<ModelState> {
        let s = g.gather_rows(st.s, rows)?;
        let enc = if rows.len() == st.enc.mask.batch_size() {
            st.enc.clone()
        } else {
            expand(g, &st.base, rows.len())?
        };
        Ok(ModelState { s, enc, ..st.clone() })
    }
}

impl StepModel for Model {
    type State = ModelState;

    fn start(&self, g: &mut Graph, src: &[usize]) -> Result<ModelState> {
        self.start_state(g, src)
    }

    fn advance(&self, g: &mut Graph, st: &ModelState, prev: &[usize]) -> Result<(ModelState, Var)> {
        let (next, r) = self.advance_state(g, st, prev)?;
        let logits = self.logits(g, &st.bound, r)?;
        Ok((next, logits))
    }

    fn select(&self, g: &mut Graph, st: &ModelState, rows: &[usize]) -> Result<ModelState> {
        self.select_state(g, st, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed per-step distributions, independent of the history.
    struct Table(Vec<Vec<f64>>);

    impl StepModel for Table {
        type State = usize;
        fn start(&self, _: &mut Graph, _: &[usize]) -> Result<usize> {
            Ok(0)
        }
        fn advance(&self, g: &mut Graph, t: &usize, prev: &[usize]) -> Result<(usize, Var)> {
            let row = &self.0[(*t).min(self.0.len() - 1)];
            let data: Vec<f64> = prev.iter().flat_map(|_| row.iter().map(|p| p.ln())).collect();
            let v = g.constant(crate::tensor::Tensor::new(vec![prev.len(), row.len()], data)?);
            Ok((t + 1, v))
        }
        fn select(&self, _: &mut Graph, t: &usize, _: &[usize]) -> Result<usize> {
            Ok(*t)
        }
    }

    #[test]
    fn beam_one_is_greedy_and_capped() {
        let t = Table(vec![vec![0.0, 0.1, 0.2, 0.7], vec![0.0, 0.1, 0.3, 0.6], vec![0.0, 0.1, 0.8, 0.1]]);
        assert_eq!(search(&t, &[], 1, 10, 1.0).unwrap(), greedy(&t, &[], 10).unwrap());
        assert_eq!(greedy(&t, &[], 10).unwrap(), vec![3, 3]);
        assert_eq!(search(&t, &[], 1, 1, 1.0).unwrap().len(), 1);
    }

    #[test]
    fn wider_beam_can_prefer_a_different_hypothesis() {
        // Step 0: token 3 (0.55) vs EOS (0.45); afterwards everything is flat.
        let third = 1.0 / 3.0;
        let t = Table(vec![vec![0.0, 0.0, 0.45, 0.55], vec![0.0, third, third, third]]);
        assert_eq!(search(&t, &[], 1, 3, 1.0).unwrap()[0], 3);
        let wide = search(&t, &[], 2, 3, 1.0).unwrap();
        assert!(wide.is_empty(), "{wide:?}");
    }
}
