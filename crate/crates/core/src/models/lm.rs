use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{CompiledLoss, Init, Layout};
use crate::datasets::vocab::{CharVocab, Vocabulary, END};
use crate::dp::ParamVector;
use crate::error::{Error, Result};
use crate::grad::{Bindings, ComputeGraph, NodeId, Tensor};
use crate::rng;

/// Single-layer gated recurrent language model shape.
///
/// `vocab` counts output tokens including the end marker; the start marker
/// is an extra input-only id equal to `vocab`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmArch {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl LmArch {
    pub fn layout(&self) -> Layout {
        let (v, e, h) = (self.vocab, self.embed, self.hidden);
        let mut l = Layout::new(format!("gru:{v}-{e}-{h}"));
        l.push("lm.embed", v + 1, e, Init::Glorot);
        l.push("lm.wx", e, 3 * h, Init::Glorot);
        l.push("lm.bx", 1, 3 * h, Init::Zeros);
        l.push("lm.uzr", h, 2 * h, Init::Glorot);
        l.push("lm.uh", h, h, Init::Glorot);
        l.push("lm.wo", h, v, Init::Glorot);
        l.push("lm.bo", 1, v, Init::Zeros);
        l
    }

    pub fn start(&self) -> usize {
        self.vocab
    }
}

/// Recurrent LM parameters plus shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrentLm {
    pub arch: LmArch,
    pub params: ParamVector,
}

/// Hidden state after consuming a prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct LmState {
    h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl RecurrentLm {
    pub fn new(arch: LmArch, seed: u64) -> Self {
        RecurrentLm {
            arch,
            params: arch.layout().init(seed),
        }
    }

    pub fn zeros(arch: LmArch) -> Self {
        RecurrentLm {
            arch,
            params: arch.layout().zeros(),
        }
    }

    fn check_token(&self, t: usize, allow_start: bool) -> Result<()> {
        let limit = if allow_start { self.arch.vocab + 1 } else { self.arch.vocab };
        if t >= limit {
            return Err(Error::UnknownToken {
                token: t,
                size: self.arch.vocab,
            });
        }
        Ok(())
    }

    /// State after consuming only the start marker.
    pub fn start(&self) -> LmState {
        let h0 = LmState {
            h: vec![0.0; self.arch.hidden],
        };
        self.advance(&h0, self.arch.start())
    }

    /// Consumes one input token.
    pub fn advance(&self, state: &LmState, token: usize) -> LmState {
        let LmArch { embed: e, hidden: h, .. } = self.arch;
        let l = self.arch.layout();
        let p = &self.params;
        let x = &l.block(p, "lm.embed")[token * e..(token + 1) * e];
        let wx = l.block(p, "lm.wx");
        let mut gx = l.block(p, "lm.bx").to_vec();
        for (i, xi) in x.iter().enumerate() {
            for (g, w) in gx.iter_mut().zip(&wx[i * 3 * h..(i + 1) * 3 * h]) {
                *g += xi * w;
            }
        }
        let uzr = l.block(p, "lm.uzr");
        let mut gh = vec![0.0; 2 * h];
        for (i, hi) in state.h.iter().enumerate() {
            for (g, u) in gh.iter_mut().zip(&uzr[i * 2 * h..(i + 1) * 2 * h]) {
                *g += hi * u;
            }
        }
        let z: Vec<f64> = (0..h).map(|j| sigmoid(gx[j] + gh[j])).collect();
        let r: Vec<f64> = (0..h).map(|j| sigmoid(gx[h + j] + gh[h + j])).collect();
        let uh = l.block(p, "lm.uh");
        let mut cand = gx[2 * h..].to_vec();
        for i in 0..h {
            let rh = r[i] * state.h[i];
            for (c, u) in cand.iter_mut().zip(&uh[i * h..(i + 1) * h]) {
                *c += rh * u;
            }
        }
        let next = (0..h)
            .map(|j| state.h[j] + z[j] * (cand[j].tanh() - state.h[j]))
            .collect();
        LmState { h: next }
    }

    /// Next-token distribution at `state`.
    pub fn dist(&self, state: &LmState) -> Vec<f64> {
        let LmArch { vocab: v, .. } = self.arch;
        let l = self.arch.layout();
        let wo = l.block(&self.params, "lm.wo");
        let mut logits = l.block(&self.params, "lm.bo").to_vec();
        for (i, hi) in state.h.iter().enumerate() {
            for (o, w) in logits.iter_mut().zip(&wo[i * v..(i + 1) * v]) {
                *o += hi * w;
            }
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in &mut logits {
            *o = (*o - m).exp();
            total += *o;
        }
        logits.iter_mut().for_each(|o| *o /= total);
        logits
    }

    /// `p(· | prefix)` where the start marker is implicit.
    pub fn next_dist(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut s = self.start();
        for &t in prefix {
            self.check_token(t, false)?;
            s = self.advance(&s, t);
        }
        Ok(self.dist(&s))
    }

    /// Natural log of the joint probability of a terminated sequence.
    pub fn log_joint_prob(&self, seq: &[usize]) -> Result<f64> {
        if seq.last() != Some(&END) {
            return Err(Error::invalid("sequence must end with the end marker"));
        }
        let mut s = self.start();
        let mut lp = 0.0;
        for (i, &t) in seq.iter().enumerate() {
            self.check_token(t, false)?;
            if t == END && i + 1 != seq.len() {
                return Err(Error::invalid("end marker before the end of the sequence"));
            }
            lp += self.dist(&s)[t].ln();
            if i + 1 < seq.len() {
                s = self.advance(&s, t);
            }
        }
        Ok(lp)
    }

    pub fn joint_prob(&self, seq: &[usize]) -> Result<f64> {
        Ok(self.log_joint_prob(seq)?.exp())
    }

    /// Ancestral sample of at most `max_len` tokens. The end marker is
    /// included when it was drawn.
    pub fn sample(&self, seed: u64, max_len: usize) -> Vec<usize> {
        let mut r = rng::stream(seed);
        let mut s = self.start();
        let mut out = Vec::new();
        while out.len() < max_len {
            let d = self.dist(&s);
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut t = d.len() - 1;
            for (i, p) in d.iter().enumerate() {
                acc += p;
                if u < acc {
                    t = i;
                    break;
                }
            }
            out.push(t);
            if t == END {
                break;
            }
            s = self.advance(&s, t);
        }
        out
    }
}

/// One GRU step inside a graph.
fn gru_step(g: &mut ComputeGraph, p: &[NodeId], hidden: usize, tok: NodeId, h: NodeId) -> NodeId {
    let (embed, wx, bx, uzr, uh) = (p[0], p[1], p[2], p[3], p[4]);
    let x = g.matmul(tok, embed);
    let gx = g.affine(x, wx, bx);
    let gh = g.matmul(h, uzr);
    let gxz = g.slice_cols(gx, 0, hidden);
    let ghz = g.slice_cols(gh, 0, hidden);
    let zs = g.add(gxz, ghz);
    let z = g.sigmoid(zs);
    let gxr = g.slice_cols(gx, hidden, hidden);
    let ghr = g.slice_cols(gh, hidden, hidden);
    let rs = g.add(gxr, ghr);
    let r = g.sigmoid(rs);
    let rh = g.mul(r, h);
    let c_in = g.matmul(rh, uh);
    let gxh = g.slice_cols(gx, 2 * hidden, hidden);
    let cs = g.add(gxh, c_in);
    let c = g.tanh(cs);
    let diff = g.sub(c, h);
    let upd = g.mul(z, diff);
    g.add(h, upd)
}

/// Summed token cross-entropy over `steps` positions, scaled by the
/// `inv_count` input.
///
/// Inputs: `tok{t}` one-hot `[B, vocab+1]`, `tgt{t}` one-hot `[B, vocab]`
/// (all-zero rows mark padding), `h0` `[B, hidden]`, `inv_count` `[1, 1]`.
pub fn lm_loss_graph(arch: &LmArch, steps: usize) -> CompiledLoss {
    let layout = arch.layout();
    let mut g = ComputeGraph::new();
    let p = layout.declare(&mut g, true);
    let mut h = g.input("h0");
    let mut total = None;
    for t in 0..steps {
        let tok = g.input(&format!("tok{t}"));
        let tgt = g.input(&format!("tgt{t}"));
        h = gru_step(&mut g, &p, arch.hidden, tok, h);
        let logits = g.affine(h, p[5], p[6]);
        let ls = g.log_softmax(logits);
        let picked = g.mul(ls, tgt);
        let s = g.sum(picked);
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s),
        });
    }
    let total = total.expect("steps >= 1");
    let inv = g.input("inv_count");
    let scaled = g.mul(total, inv);
    let loss = g.scale(scaled, -1.0);
    g.set_name(loss, "lm_loss");
    CompiledLoss::new(g, loss, &p, layout)
}

/// Bindings for [`lm_loss_graph`] from terminated sequences. Returns the
/// number of steps (longest sequence) alongside.
pub fn lm_batch(arch: &LmArch, seqs: &[Vec<usize>]) -> Result<(usize, Bindings)> {
    let steps = seqs.iter().map(Vec::len).max().unwrap_or(0);
    if steps == 0 {
        return Err(Error::invalid("empty LM batch"));
    }
    let b = seqs.len();
    let v = arch.vocab;
    let mut bind = Bindings::new();
    let mut count = 0usize;
    for t in 0..steps {
        let mut tok = Tensor::zeros(b, v + 1);
        let mut tgt = Tensor::zeros(b, v);
        for (i, s) in seqs.iter().enumerate() {
            if t < s.len() {
                let input = if t == 0 { arch.start() } else { s[t - 1] };
                if s[t] >= v || input > v {
                    return Err(Error::UnknownToken { token: s[t].max(input), size: v });
                }
                tok.data_mut()[i * (v + 1) + input] = 1.0;
                tgt.data_mut()[i * v + s[t]] = 1.0;
                count += 1;
            }
        }
        bind.insert(format!("tok{t}"), tok);
        bind.insert(format!("tgt{t}"), tgt);
    }
    bind.insert("h0".into(), Tensor::zeros(b, arch.hidden));
    bind.insert("inv_count".into(), Tensor::scalar(1.0 / count as f64));
    Ok((steps, bind))
}

/// Common read-only interface of the word and character LMs.
pub trait LanguageModel {
    fn recurrent(&self) -> &RecurrentLm;
}

pub fn lm_next_dist(lm: &impl LanguageModel, prefix: &[usize]) -> Result<Vec<f64>> {
    lm.recurrent().next_dist(prefix)
}

pub fn lm_joint_prob(lm: &impl LanguageModel, seq: &[usize]) -> Result<f64> {
    lm.recurrent().joint_prob(seq)
}

pub fn lm_sample(lm: &impl LanguageModel, seed: u64, max_len: usize) -> Vec<usize> {
    lm.recurrent().sample(seed, max_len)
}

/// Word-level LM over a fixed vocabulary with an OOV id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordLm {
    pub vocab: Vocabulary,
    pub lm: RecurrentLm,
}

impl WordLm {
    pub fn new(vocab: Vocabulary, embed: usize, hidden: usize, seed: u64) -> Self {
        let arch = LmArch {
            vocab: vocab.len(),
            embed,
            hidden,
        };
        WordLm {
            vocab,
            lm: RecurrentLm::new(arch, seed),
        }
    }
}

impl LanguageModel for WordLm {
    fn recurrent(&self) -> &RecurrentLm {
        &self.lm
    }
}

/// Character-level LM with start- and end-of-word markers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharLm {
    pub vocab: CharVocab,
    pub lm: RecurrentLm,
}

impl CharLm {
    pub fn new(vocab: CharVocab, embed: usize, hidden: usize, seed: u64) -> Self {
        let arch = LmArch {
            vocab: vocab.len(),
            embed,
            hidden,
        };
        CharLm {
            vocab,
            lm: RecurrentLm::new(arch, seed),
        }
    }
}

impl LanguageModel for CharLm {
    fn recurrent(&self) -> &RecurrentLm {
        &self.lm
    }
}

impl LanguageModel for RecurrentLm {
    fn recurrent(&self) -> &RecurrentLm {
        self
    }
}
