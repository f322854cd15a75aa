//! Bidirectional LSTM baseline over flattened frames.
//!
//! Gate blocks are packed `[input, forget, cell, output]` along the last
//! axis. The classifier reads the forward direction's last state and the
//! backward direction's state at the first frame.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::linalg::{affine, col_sum_acc, mm_acc, mm_nt_acc, mm_tn_acc, sigmoid};
use super::{Init, Layout, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub seq_len: usize,
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            seq_len: 30,
            input: 100,
            hidden: 128,
            classes: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirIndex {
    wx: Range<usize>,
    wh: Range<usize>,
    b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmIndex {
    dirs: [DirIndex; 2],
    head_w: Range<usize>,
    head_b: Range<usize>,
}

impl LstmConfig {
    pub(super) fn layout(&self) -> (Layout, LstmIndex) {
        let (n, h) = (self.input, self.hidden);
        let a = 1.0 / (h as f64).sqrt();
        let mut l = Layout::default();
        let mut dir = |name: &str| DirIndex {
            wx: l.add(format!("{name}.wx"), &[n, 4 * h], Init::Uniform(a)),
            wh: l.add(format!("{name}.wh"), &[h, 4 * h], Init::Uniform(a)),
            b: l.add(format!("{name}.b"), &[4 * h], Init::Zeros),
        };
        let dirs = [dir("fwd"), dir("bwd")];
        let head_a = (6.0 / (2 * h + self.classes) as f64).sqrt();
        let head_w = l.add("head.w", &[2 * h, self.classes], Init::Uniform(head_a));
        let head_b = l.add("head.b", &[self.classes], Init::Zeros);
        (l, LstmIndex { dirs, head_w, head_b })
    }
}

/// Activations of one direction, stored in processing order.
#[derive(Debug, Clone)]
pub struct DirTrace<T> {
    gates: Vec<T>,
    cells: Vec<T>,
    hiddens: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Trace<T> {
    input: Vec<T>,
    dirs: [DirTrace<T>; 2],
    features: Vec<T>,
    pub logits: Vec<T>,
}

pub struct Lstm<'a, T> {
    pub(super) cfg: &'a LstmConfig,
    pub(super) idx: &'a LstmIndex,
    pub(super) p: &'a [T],
}

impl<'a, T: Real> Lstm<'a, T> {
    fn w(&self, r: &Range<usize>) -> &'a [T] {
        &self.p[r.clone()]
    }

    /// Frame order for a direction.
    fn order(&self, dir: usize) -> Vec<usize> {
        let t = self.cfg.seq_len;
        if dir == 0 {
            (0..t).collect()
        } else {
            (0..t).rev().collect()
        }
    }

    fn run_dir(&self, dir: usize, input: &[T]) -> DirTrace<T> {
        let c = self.cfg;
        let (t, n, h) = (c.seq_len, c.input, c.hidden);
        let di = &self.idx.dirs[dir];
        let xproj = affine(input, self.w(&di.wx), self.w(&di.b), t, n, 4 * h);
        let mut gates = Vec::with_capacity(t * 4 * h);
        let mut cells = Vec::with_capacity(t * h);
        let mut hiddens = Vec::with_capacity(t * h);
        let mut hprev = vec![T::zero(); h];
        let mut cprev = vec![T::zero(); h];
        for (step, frame) in self.order(dir).into_iter().enumerate() {
            let mut z = xproj[frame * 4 * h..(frame + 1) * 4 * h].to_vec();
            if step > 0 {
                mm_acc(&hprev, self.w(&di.wh), &mut z, 1, h, 4 * h);
            }
            for j in 0..h {
                let ig = sigmoid(z[j]);
                let fg = sigmoid(z[h + j]);
                let gg = z[2 * h + j].tanh();
                let og = sigmoid(z[3 * h + j]);
                z[j] = ig;
                z[h + j] = fg;
                z[2 * h + j] = gg;
                z[3 * h + j] = og;
                cprev[j] = fg * cprev[j] + ig * gg;
                hprev[j] = og * cprev[j].tanh();
            }
            gates.extend_from_slice(&z);
            cells.extend_from_slice(&cprev);
            hiddens.extend_from_slice(&hprev);
        }
        DirTrace { gates, cells, hiddens }
    }

    pub fn forward(&self, input: &[T]) -> Trace<T> {
        let c = self.cfg;
        let (t, h) = (c.seq_len, c.hidden);
        let dirs = [self.run_dir(0, input), self.run_dir(1, input)];
        let mut features = dirs[0].hiddens[(t - 1) * h..].to_vec();
        features.extend_from_slice(&dirs[1].hiddens[(t - 1) * h..]);
        let logits = affine(&features, self.w(&self.idx.head_w), self.w(&self.idx.head_b), 1, 2 * h, c.classes);
        Trace {
            input: input.to_vec(),
            dirs,
            features,
            logits,
        }
    }

    pub fn backward(&self, tr: &Trace<T>, dlogits: &[T], grad: &mut [T]) {
        let c = self.cfg;
        let h = c.hidden;
        mm_tn_acc(&tr.features, dlogits, &mut grad[self.idx.head_w.clone()], 2 * h, 1, c.classes);
        col_sum_acc(dlogits, &mut grad[self.idx.head_b.clone()], 1, c.classes);
        let mut dfeat = vec![T::zero(); 2 * h];
        mm_nt_acc(dlogits, self.w(&self.idx.head_w), &mut dfeat, 1, c.classes, 2 * h);
        for dir in 0..2 {
            self.dir_backward(dir, &tr.dirs[dir], &tr.input, &dfeat[dir * h..(dir + 1) * h], grad);
        }
    }

    fn dir_backward(&self, dir: usize, tr: &DirTrace<T>, input: &[T], dh_last: &[T], grad: &mut [T]) {
        let c = self.cfg;
        let (t, n, h) = (c.seq_len, c.input, c.hidden);
        let di = &self.idx.dirs[dir];
        let one = T::one();
        let order = self.order(dir);
        let mut dh = dh_last.to_vec();
        let mut dc = vec![T::zero(); h];
        let mut dz_all = vec![T::zero(); t * 4 * h];
        let mut dwh = vec![T::zero(); h * 4 * h];
        for step in (0..t).rev() {
            let g = &tr.gates[step * 4 * h..(step + 1) * 4 * h];
            let cell = &tr.cells[step * h..(step + 1) * h];
            let frame = order[step];
            let dz = &mut dz_all[frame * 4 * h..(frame + 1) * 4 * h];
            for j in 0..h {
                let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = cell[j].tanh();
                let cprev = if step > 0 { tr.cells[(step - 1) * h + j] } else { T::zero() };
                dc[j] += dh[j] * og * (one - tc * tc);
                dz[j] = dc[j] * gg * ig * (one - ig);
                dz[h + j] = dc[j] * cprev * fg * (one - fg);
                dz[2 * h + j] = dc[j] * ig * (one - gg * gg);
                dz[3 * h + j] = dh[j] * tc * og * (one - og);
                dc[j] *= fg;
            }
            if step > 0 {
                let hprev = &tr.hiddens[(step - 1) * h..step * h];
                mm_tn_acc(hprev, dz, &mut dwh, h, 1, 4 * h);
                dh.fill(T::zero());
                mm_nt_acc(dz, self.w(&di.wh), &mut dh, 1, 4 * h, h);
            }
        }
        for (g, v) in grad[di.wh.clone()].iter_mut().zip(&dwh) {
            *g += *v;
        }
        col_sum_acc(&dz_all, &mut grad[di.b.clone()], t, 4 * h);
        mm_tn_acc(input, &dz_all, &mut grad[di.wx.clone()], n, t, 4 * h);
    }
}
