//! Recurrent building blocks shared by the translation model, the
//! pseudo-source encoder, the discriminator and the language model.

use rand::Rng;

use crate::corpus::{EOS, PAD};
use crate::error::Result;
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

/// Additive score given to padded attention positions.
const MASKED: f64 = -1e9;

/// Token ids of a batch, padded to a common length, batch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<usize>,
    pub lens: Vec<usize>,
    pub width: usize,
}

impl PaddedBatch {
    /// Appends EOS to every sequence and pads with PAD.
    pub fn with_eos(seqs: &[&[usize]]) -> Self {
        let width = seqs.iter().map(|s| s.len() + 1).max().unwrap_or(1);
        let mut ids = Vec::with_capacity(seqs.len() * width);
        let mut lens = Vec::with_capacity(seqs.len());
        for s in seqs {
            ids.extend_from_slice(s);
            ids.push(EOS);
            ids.extend(std::iter::repeat_n(PAD, width - s.len() - 1));
            lens.push(s.len() + 1);
        }
        PaddedBatch { ids, lens, width }
    }

    /// Decoder inputs for teacher forcing: EOS followed by the target
    /// without its final symbol.
    pub fn shifted_right(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.ids.len());
        for row in self.ids.chunks_exact(self.width) {
            out.push(EOS);
            out.extend_from_slice(&row[..self.width - 1]);
        }
        out
    }

    pub fn batch_size(&self) -> usize {
        self.lens.len()
    }

    pub fn mask(&self) -> SeqMask {
        SeqMask {
            lens: self.lens.clone(),
            width: self.width,
        }
    }

    /// 1 on real positions, 0 on padding, batch-major.
    pub fn weights(&self) -> Vec<f64> {
        self.mask().weights()
    }

    pub fn num_tokens(&self) -> usize {
        self.lens.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqMask {
    pub lens: Vec<usize>,
    pub width: usize,
}

impl SeqMask {
    pub fn batch_size(&self) -> usize {
        self.lens.len()
    }

    pub fn has_padding(&self) -> bool {
        self.lens.iter().any(|&l| l < self.width)
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.lens.len() * self.width);
        for &l in &self.lens {
            w.extend((0..self.width).map(|t| if t < l { 1.0 } else { 0.0 }));
        }
        w
    }

    /// `[B,1]` validity column at step `t`, or `None` when every row is valid.
    pub fn column(&self, t: usize) -> Option<Tensor> {
        if self.lens.iter().all(|&l| t < l) {
            return None;
        }
        let data = self.lens.iter().map(|&l| if t < l { 1.0 } else { 0.0 }).collect();
        Some(Tensor::new(vec![self.lens.len(), 1], data).expect("shape"))
    }

    /// `[B,T]` additive attention mask.
    pub fn additive(&self) -> Tensor {
        let data = self.weights().into_iter().map(|w| if w > 0.0 { 0.0 } else { MASKED }).collect();
        Tensor::new(vec![self.lens.len(), self.width], data).expect("shape")
    }

    /// `[B,T]` weights averaging over the real positions of each row.
    pub fn mean_weights(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.lens.len() * self.width);
        for &l in &self.lens {
            data.extend((0..self.width).map(|t| if t < l { 1.0 / l as f64 } else { 0.0 }));
        }
        Tensor::new(vec![self.lens.len(), self.width], data).expect("shape")
    }
}

/// Parameters of one GRU layer. Input projections carry the bias; the
/// recurrent candidate projection has its own bias (applied before the
/// reset gate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruIds {
    pub w: ParamId,
    pub b: ParamId,
    pub u_rz: ParamId,
    pub u_n: ParamId,
    pub b_hn: ParamId,
    pub hidden: usize,
}

impl GruIds {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, group: &str, input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        GruIds {
            w: store.add_uniform(&format!("{prefix}.w"), group, &[input, 3 * hidden], scale, rng),
            b: store.add_uniform(&format!("{prefix}.b"), group, &[3 * hidden], scale, rng),
            u_rz: store.add_uniform(&format!("{prefix}.u_rz"), group, &[hidden, 2 * hidden], scale, rng),
            u_n: store.add_uniform(&format!("{prefix}.u_n"), group, &[hidden, hidden], scale, rng),
            b_hn: store.add_uniform(&format!("{prefix}.b_hn"), group, &[hidden], scale, rng),
            hidden,
        }
    }

    /// Input projection `x·W + b` for a `[N, in]` input.
    pub fn project(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let xw = g.matmul(x, b[self.w])?;
        g.add_row(xw, b[self.b])
    }

    /// One step given the projected input `gx` (`[B,3H]`).
    pub fn step(&self, g: &mut Graph, b: &Bound, gx: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let gh = g.matmul(h, b[self.u_rz])?;
        let gx_rz = g.slice_cols(gx, 0, 2 * hd)?;
        let rz_pre = g.add(gx_rz, gh)?;
        let rz = g.sigmoid(rz_pre);
        let r = g.slice_cols(rz, 0, hd)?;
        let z = g.slice_cols(rz, hd, 2 * hd)?;
        let hn = g.matmul(h, b[self.u_n])?;
        let hn = g.add_row(hn, b[self.b_hn])?;
        let rhn = g.mul(r, hn)?;
        let gx_n = g.slice_cols(gx, 2 * hd, 3 * hd)?;
        let n_pre = g.add(gx_n, rhn)?;
        let n = g.tanh(n_pre);
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }
}

/// Keeps `prev` where the mask column is 0.
fn masked_update(g: &mut Graph, new: Var, prev: Var, col: Option<Tensor>) -> Result<Var> {
    match col {
        None => Ok(new),
        Some(c) => {
            let c = g.constant(c);
            let d = g.sub(new, prev)?;
            let d = g.mul_col(d, c)?;
            g.add(prev, d)
        }
    }
}

/// Runs a GRU over `[B,T,D]` inputs, returning the `T` hidden states
/// (`[B,H]` each) in input order.
pub fn run_gru(g: &mut Graph, b: &Bound, ids: &GruIds, x: Var, mask: &SeqMask, reverse: bool) -> Result<Vec<Var>> {
    let shape = g.value(x).shape().to_vec();
    let (bs, t, d) = (shape[0], shape[1], shape[2]);
    let flat = g.reshape(x, &[bs * t, d])?;
    let gx = ids.project(g, b, flat)?;
    let gx = g.reshape(gx, &[bs, t, 3 * ids.hidden])?;
    let mut h = g.constant(Tensor::zeros(&[bs, ids.hidden]));
    let mut states = vec![h; t];
    let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
    for ti in order {
        let gxt = g.time_slice(gx, ti)?;
        let new = ids.step(g, b, gxt, h)?;
        // Trailing padding cannot influence earlier states of a forward pass.
        let col = if reverse { mask.column(ti) } else { None };
        h = masked_update(g, new, h, col)?;
        states[ti] = h;
    }
    Ok(states)
}

/// Bidirectional GRU; returns `[B,T,2H]` (forward ‖ backward).
pub fn run_bigru(g: &mut Graph, b: &Bound, fwd: &GruIds, bwd: &GruIds, x: Var, mask: &SeqMask) -> Result<Var> {
    let f = run_gru(g, b, fwd, x, mask, false)?;
    let r = run_gru(g, b, bwd, x, mask, true)?;
    let steps = f
        .into_iter()
        .zip(r)
        .map(|(a, c)| g.concat_cols(&[a, c]))
        .collect::<Result<Vec<_>>>()?;
    g.stack_time(&steps)
}

/// Embeds a padded batch into `[B,T,E]`.
pub fn embed(g: &mut Graph, table: Var, batch_ids: &[usize], bs: usize, width: usize) -> Result<Var> {
    let e = g.gather_rows(table, batch_ids)?;
    let dim = g.value(e).cols();
    g.reshape(e, &[bs, width, dim])
}
