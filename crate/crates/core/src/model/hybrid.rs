//! Convolutional stem + transformer encoder classifier.
//!
//! Tensors are row-major and channel-last. Convolution kernels are stored
//! `[kh, kw, c_in, c_out]` and applied through im2col, so every dense step
//! runs on the kernels in [`super::linalg`].

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::linalg::{
    affine, col_sum_acc, gelu, gelu_grad, layer_norm, layer_norm_backward, mm_nt_acc, mm_tn_acc, relu,
    softmax_in_place, LnCache,
};
use super::{positional_encoding, Init, Layout, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub seq_len: usize,
    pub grid: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    pub layers: usize,
    pub head_hidden: usize,
    pub classes: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            seq_len: 30,
            grid: 10,
            conv1: 16,
            conv2: 32,
            d_model: 64,
            heads: 4,
            ffn: 128,
            layers: 4,
            head_hidden: 64,
            classes: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerIndex {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    qkv_w: Range<usize>,
    qkv_b: Range<usize>,
    out_w: Range<usize>,
    out_b: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    ffn1_w: Range<usize>,
    ffn1_b: Range<usize>,
    ffn2_w: Range<usize>,
    ffn2_b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridIndex {
    conv1_w: Range<usize>,
    conv1_b: Range<usize>,
    conv2_w: Range<usize>,
    conv2_b: Range<usize>,
    proj_w: Range<usize>,
    proj_b: Range<usize>,
    layers: Vec<LayerIndex>,
    lnf_g: Range<usize>,
    lnf_b: Range<usize>,
    head1_w: Range<usize>,
    head1_b: Range<usize>,
    head2_w: Range<usize>,
    head2_b: Range<usize>,
}

fn xavier(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
}

fn he(fan_in: usize) -> Init {
    Init::Uniform((6.0 / fan_in as f64).sqrt())
}

impl HybridConfig {
    /// Side of the grid after 2×2 max pooling.
    pub fn pooled(&self) -> usize {
        self.grid / 2
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Stem embeddings are multiplied by `sqrt(d_model)` before positions are
    /// added, so the content signal is not drowned out by the unit-amplitude
    /// encoding.
    pub fn embed_scale(&self) -> f64 {
        (self.d_model as f64).sqrt()
    }

    pub(super) fn layout(&self) -> (Layout, HybridIndex) {
        assert!(self.d_model % self.heads == 0, "d_model must split evenly across heads");
        assert!(self.grid >= 2, "grid must survive pooling");
        let (c1, c2, d, f) = (self.conv1, self.conv2, self.d_model, self.ffn);
        let mut l = Layout::default();
        let conv1_w = l.add("stem.conv1.w", &[3, 3, 1, c1], he(9));
        let conv1_b = l.add("stem.conv1.b", &[c1], Init::Zeros);
        let conv2_w = l.add("stem.conv2.w", &[3, 3, c1, c2], he(9 * c1));
        let conv2_b = l.add("stem.conv2.b", &[c2], Init::Zeros);
        let proj_w = l.add("stem.proj.w", &[c2, d], xavier(c2, d));
        let proj_b = l.add("stem.proj.b", &[d], Init::Zeros);
        // Residual branches start small so the stack begins near identity.
        let depth = (2.0 * self.layers as f64).sqrt().max(1.0);
        let scaled = |i: Init| match i {
            Init::Uniform(a) => Init::Uniform(a / depth),
            other => other,
        };
        let layers = (0..self.layers)
            .map(|i| LayerIndex {
                ln1_g: l.add(format!("enc.{i}.ln1.g"), &[d], Init::Ones),
                ln1_b: l.add(format!("enc.{i}.ln1.b"), &[d], Init::Zeros),
                qkv_w: l.add(format!("enc.{i}.attn.qkv.w"), &[d, 3 * d], xavier(d, d)),
                qkv_b: l.add(format!("enc.{i}.attn.qkv.b"), &[3 * d], Init::Zeros),
                out_w: l.add(format!("enc.{i}.attn.out.w"), &[d, d], scaled(xavier(d, d))),
                out_b: l.add(format!("enc.{i}.attn.out.b"), &[d], Init::Zeros),
                ln2_g: l.add(format!("enc.{i}.ln2.g"), &[d], Init::Ones),
                ln2_b: l.add(format!("enc.{i}.ln2.b"), &[d], Init::Zeros),
                ffn1_w: l.add(format!("enc.{i}.ffn.w1"), &[d, f], xavier(d, f)),
                ffn1_b: l.add(format!("enc.{i}.ffn.b1"), &[f], Init::Zeros),
                ffn2_w: l.add(format!("enc.{i}.ffn.w2"), &[f, d], scaled(xavier(f, d))),
                ffn2_b: l.add(format!("enc.{i}.ffn.b2"), &[d], Init::Zeros),
            })
            .collect();
        let lnf_g = l.add("final_ln.g", &[d], Init::Ones);
        let lnf_b = l.add("final_ln.b", &[d], Init::Zeros);
        let head1_w = l.add("head.w1", &[d, self.head_hidden], he(d));
        let head1_b = l.add("head.b1", &[self.head_hidden], Init::Zeros);
        let head2_w = l.add("head.w2", &[self.head_hidden, self.classes], xavier(self.head_hidden, self.classes));
        let head2_b = l.add("head.b2", &[self.classes], Init::Zeros);
        let idx = HybridIndex {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            proj_w,
            proj_b,
            layers,
            lnf_g,
            lnf_b,
            head1_w,
            head1_b,
            head2_w,
            head2_b,
        };
        (l, idx)
    }
}

/// Patches for a 3×3, stride 1, zero-padded convolution over `frames`
/// images of `h×w×c`. Row `(f, r, col)` holds the patch in `(kr, kc, ci)` order.
fn im2col<T: Real>(x: &[T], frames: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let k = 9 * c;
    let mut cols = vec![T::zero(); frames * h * w * k];
    for f in 0..frames {
        for r in 0..h {
            for cc in 0..w {
                let row = ((f * h + r) * w + cc) * k;
                for kr in 0..3 {
                    let Some(ir) = (r + kr).checked_sub(1).filter(|&v| v < h) else {
                        continue;
                    };
                    for kc in 0..3 {
                        let Some(ic) = (cc + kc).checked_sub(1).filter(|&v| v < w) else {
                            continue;
                        };
                        let src = ((f * h + ir) * w + ic) * c;
                        let dst = row + (kr * 3 + kc) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<T: Real>(dcols: &[T], frames: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let k = 9 * c;
    let mut dx = vec![T::zero(); frames * h * w * c];
    for f in 0..frames {
        for r in 0..h {
            for cc in 0..w {
                let row = ((f * h + r) * w + cc) * k;
                for kr in 0..3 {
                    let Some(ir) = (r + kr).checked_sub(1).filter(|&v| v < h) else {
                        continue;
                    };
                    for kc in 0..3 {
                        let Some(ic) = (cc + kc).checked_sub(1).filter(|&v| v < w) else {
                            continue;
                        };
                        let dst = ((f * h + ir) * w + ic) * c;
                        let src = row + (kr * 3 + kc) * c;
                        for (d, &s) in dx[dst..dst + c].iter_mut().zip(&dcols[src..src + c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 2×2 stride-2 max pooling; returns the pooled map and, for each output,
/// the flat input index that won.
fn max_pool<T: Real>(x: &[T], frames: usize, h: usize, w: usize, c: usize) -> (Vec<T>, Vec<usize>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(frames * ph * pw * c);
    let mut arg = Vec::with_capacity(out.capacity());
    for f in 0..frames {
        for r in 0..ph {
            for cc in 0..pw {
                for ch in 0..c {
                    let mut best = ((f * h + 2 * r) * w + 2 * cc) * c + ch;
                    for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ((f * h + 2 * r + dr) * w + 2 * cc + dc) * c + ch;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    (out, arg)
}

fn add_in_place<T: Real>(a: &mut [T], b: &[T]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Two disjoint mutable views into the gradient vector; `a` must precede `b`.
fn pair_mut<'g, T>(g: &'g mut [T], a: &Range<usize>, b: &Range<usize>) -> (&'g mut [T], &'g mut [T]) {
    assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

#[derive(Debug, Clone)]
pub struct StemCache<T> {
    cols1: Vec<T>,
    act1: Vec<T>,
    pool_arg: Vec<usize>,
    cols2: Vec<T>,
    act2: Vec<T>,
    gap: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    /// Attention weights, `heads × seq × seq`; every row sums to one.
    pub attn: Vec<T>,
    o: Vec<T>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    stem: StemCache<T>,
    pub layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    pooled: Vec<T>,
    hidden: Vec<T>,
    pub logits: Vec<T>,
}

/// Borrowed view of a hybrid model's parameters.
pub struct Hybrid<'a, T> {
    pub(super) cfg: &'a HybridConfig,
    pub(super) idx: &'a HybridIndex,
    pub(super) p: &'a [T],
}

impl<'a, T: Real> Hybrid<'a, T> {
    fn w(&self, r: &Range<usize>) -> &'a [T] {
        &self.p[r.clone()]
    }

    /// Per-frame embeddings `seq × d_model`, without positions.
    pub fn stem_forward(&self, input: &[T]) -> (Vec<T>, StemCache<T>) {
        let c = self.cfg;
        let (t, g, p) = (c.seq_len, c.grid, c.pooled());
        let cols1 = im2col(input, t, g, g, 1);
        let mut act1 = affine(&cols1, self.w(&self.idx.conv1_w), self.w(&self.idx.conv1_b), t * g * g, 9, c.conv1);
        act1.iter_mut().for_each(|v| *v = relu(*v));
        let (pooled, pool_arg) = max_pool(&act1, t, g, g, c.conv1);
        let cols2 = im2col(&pooled, t, p, p, c.conv1);
        let mut act2 = affine(
            &cols2,
            self.w(&self.idx.conv2_w),
            self.w(&self.idx.conv2_b),
            t * p * p,
            9 * c.conv1,
            c.conv2,
        );
        act2.iter_mut().for_each(|v| *v = relu(*v));
        let inv = T::one() / T::c((p * p) as f64);
        let mut gap = vec![T::zero(); t * c.conv2];
        for f in 0..t {
            let dst = &mut gap[f * c.conv2..(f + 1) * c.conv2];
            for pix in act2[f * p * p * c.conv2..(f + 1) * p * p * c.conv2].chunks_exact(c.conv2) {
                add_in_place(dst, pix);
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        let z = affine(&gap, self.w(&self.idx.proj_w), self.w(&self.idx.proj_b), t, c.conv2, c.d_model);
        let cache = StemCache {
            cols1,
            act1,
            pool_arg,
            cols2,
            act2,
            gap,
        };
        (z, cache)
    }

    fn layer_forward(&self, li: &LayerIndex, x: &[T]) -> (Vec<T>, LayerCache<T>) {
        let c = self.cfg;
        let (t, d, nh, dh) = (c.seq_len, c.d_model, c.heads, c.head_dim());
        let (h1, ln1) = layer_norm(x, self.w(&li.ln1_g), self.w(&li.ln1_b), t, d);
        let qkv = affine(&h1, self.w(&li.qkv_w), self.w(&li.qkv_b), t, d, 3 * d);
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let mut attn = vec![T::zero(); nh * t * t];
        let mut o = vec![T::zero(); t * d];
        for h in 0..nh {
            for i in 0..t {
                let q = &qkv[i * 3 * d + h * dh..][..dh];
                let row = &mut attn[(h * t + i) * t..][..t];
                for (j, s) in row.iter_mut().enumerate() {
                    let k = &qkv[j * 3 * d + d + h * dh..][..dh];
                    *s = q.iter().zip(k).fold(T::zero(), |acc, (&a, &b)| acc + a * b) * scale;
                }
                softmax_in_place(row);
                let orow = &mut o[i * d + h * dh..][..dh];
                for (j, &a) in row.iter().enumerate() {
                    let v = &qkv[j * 3 * d + 2 * d + h * dh..][..dh];
                    for (ov, &vv) in orow.iter_mut().zip(v) {
                        *ov += a * vv;
                    }
                }
            }
        }
        let mut x2 = affine(&o, self.w(&li.out_w), self.w(&li.out_b), t, d, d);
        add_in_place(&mut x2, x);
        let (h2, ln2) = layer_norm(&x2, self.w(&li.ln2_g), self.w(&li.ln2_b), t, d);
        let u = affine(&h2, self.w(&li.ffn1_w), self.w(&li.ffn1_b), t, d, c.ffn);
        let g: Vec<T> = u.iter().map(|&v| gelu(v)).collect();
        let mut y = affine(&g, self.w(&li.ffn2_w), self.w(&li.ffn2_b), t, c.ffn, d);
        add_in_place(&mut y, &x2);
        let cache = LayerCache {
            ln1,
            h1,
            qkv,
            attn,
            o,
            ln2,
            h2,
            u,
            g,
        };
        (y, cache)
    }

    /// The encoder stack on `seq × d_model` input. Excludes the final layer
    /// norm, so a stack with all-zero weights is the identity.
    pub fn encoder_forward(&self, x: &[T]) -> (Vec<T>, Vec<LayerCache<T>>) {
        let mut h = x.to_vec();
        let mut caches = Vec::with_capacity(self.idx.layers.len());
        for li in &self.idx.layers {
            let (y, cache) = self.layer_forward(li, &h);
            h = y;
            caches.push(cache);
        }
        (h, caches)
    }

    pub fn forward(&self, input: &[T]) -> Trace<T> {
        let c = self.cfg;
        let (t, d) = (c.seq_len, c.d_model);
        let (mut z, stem) = self.stem_forward(input);
        let scale = T::c(c.embed_scale());
        z.iter_mut().for_each(|v| *v *= scale);
        add_in_place(&mut z, &positional_encoding::<T>(t, d));
        let (h, layers) = self.encoder_forward(&z);
        let (n, lnf) = layer_norm(&h, self.w(&self.idx.lnf_g), self.w(&self.idx.lnf_b), t, d);
        let mut pooled = vec![T::zero(); d];
        col_sum_acc(&n, &mut pooled, t, d);
        let inv_t = T::one() / T::c(t as f64);
        pooled.iter_mut().for_each(|v| *v *= inv_t);
        let mut hidden = affine(&pooled, self.w(&self.idx.head1_w), self.w(&self.idx.head1_b), 1, d, c.head_hidden);
        hidden.iter_mut().for_each(|v| *v = relu(*v));
        let logits = affine(&hidden, self.w(&self.idx.head2_w), self.w(&self.idx.head2_b), 1, c.head_hidden, c.classes);
        Trace {
            stem,
            layers,
            lnf,
            pooled,
            hidden,
            logits,
        }
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂logits`.
    pub fn backward(&self, tr: &Trace<T>, dlogits: &[T], grad: &mut [T]) {
        let c = self.cfg;
        let ix = self.idx;
        let (t, d, hh) = (c.seq_len, c.d_model, c.head_hidden);

        mm_tn_acc(&tr.hidden, dlogits, &mut grad[ix.head2_w.clone()], hh, 1, c.classes);
        col_sum_acc(dlogits, &mut grad[ix.head2_b.clone()], 1, c.classes);
        let mut dhidden = vec![T::zero(); hh];
        mm_nt_acc(dlogits, self.w(&ix.head2_w), &mut dhidden, 1, c.classes, hh);
        for (dv, &hv) in dhidden.iter_mut().zip(&tr.hidden) {
            if hv <= T::zero() {
                *dv = T::zero();
            }
        }
        mm_tn_acc(&tr.pooled, &dhidden, &mut grad[ix.head1_w.clone()], d, 1, hh);
        col_sum_acc(&dhidden, &mut grad[ix.head1_b.clone()], 1, hh);
        let mut dpooled = vec![T::zero(); d];
        mm_nt_acc(&dhidden, self.w(&ix.head1_w), &mut dpooled, 1, hh, d);

        let inv_t = T::one() / T::c(t as f64);
        let dn: Vec<T> = (0..t).flat_map(|_| dpooled.iter().map(move |&v| v * inv_t)).collect();
        let (dg, db) = pair_mut(grad, &ix.lnf_g, &ix.lnf_b);
        let mut dh = layer_norm_backward(&dn, &tr.lnf, self.w(&ix.lnf_g), dg, db, t, d);

        for (li, cache) in ix.layers.iter().zip(&tr.layers).rev() {
            dh = self.layer_backward(li, cache, &dh, grad);
        }
        // Positions are constant; only the embedding scale sits between.
        let scale = T::c(c.embed_scale());
        dh.iter_mut().for_each(|v| *v *= scale);
        self.stem_backward(&tr.stem, &dh, grad);
    }

    fn layer_backward(&self, li: &LayerIndex, k: &LayerCache<T>, dy: &[T], grad: &mut [T]) -> Vec<T> {
        let c = self.cfg;
        let (t, d, f, nh, dh) = (c.seq_len, c.d_model, c.ffn, c.heads, c.head_dim());

        let mut dx2 = dy.to_vec();
        mm_tn_acc(&k.g, dy, &mut grad[li.ffn2_w.clone()], f, t, d);
        col_sum_acc(dy, &mut grad[li.ffn2_b.clone()], t, d);
        let mut du = vec![T::zero(); t * f];
        mm_nt_acc(dy, self.w(&li.ffn2_w), &mut du, t, d, f);
        for (g, &u) in du.iter_mut().zip(&k.u) {
            *g *= gelu_grad(u);
        }
        mm_tn_acc(&k.h2, &du, &mut grad[li.ffn1_w.clone()], d, t, f);
        col_sum_acc(&du, &mut grad[li.ffn1_b.clone()], t, f);
        let mut dh2 = vec![T::zero(); t * d];
        mm_nt_acc(&du, self.w(&li.ffn1_w), &mut dh2, t, f, d);
        let (dg, db) = pair_mut(grad, &li.ln2_g, &li.ln2_b);
        add_in_place(&mut dx2, &layer_norm_backward(&dh2, &k.ln2, self.w(&li.ln2_g), dg, db, t, d));

        mm_tn_acc(&k.o, &dx2, &mut grad[li.out_w.clone()], d, t, d);
        col_sum_acc(&dx2, &mut grad[li.out_b.clone()], t, d);
        let mut d_o = vec![T::zero(); t * d];
        mm_nt_acc(&dx2, self.w(&li.out_w), &mut d_o, t, d, d);

        let scale = T::c(1.0 / (dh as f64).sqrt());
        let mut dq = vec![T::zero(); t * d];
        let mut dk = vec![T::zero(); t * d];
        let mut dv = vec![T::zero(); t * d];
        let mut da = vec![T::zero(); t];
        let mut ds = vec![T::zero(); t];
        // Head `h` of row `row`, in a `seq × d` matrix or block `block` of `qkv`.
        let at = |row: usize, h: usize| row * d + h * dh..row * d + (h + 1) * dh;
        let qkv_at = |row: usize, block: usize, h: usize| {
            let start = row * 3 * d + block * d + h * dh;
            start..start + dh
        };
        for h in 0..nh {
            for i in 0..t {
                let arow = &k.attn[(h * t + i) * t..][..t];
                let dorow = &d_o[at(i, h)];
                for (j, dav) in da.iter_mut().enumerate() {
                    let v = &k.qkv[qkv_at(j, 2, h)];
                    *dav = dorow.iter().zip(v).fold(T::zero(), |s, (&a, &b)| s + a * b);
                }
                let dot = arow.iter().zip(&da).fold(T::zero(), |s, (&a, &b)| s + a * b);
                for ((dsv, &a), &dav) in ds.iter_mut().zip(arow).zip(&da) {
                    *dsv = a * (dav - dot) * scale;
                }
                let qi = &k.qkv[qkv_at(i, 0, h)];
                let r = at(i, h);
                for (j, (&dsv, &a)) in ds.iter().zip(arow).enumerate() {
                    let rj = at(j, h);
                    for (x, &kv) in dq[r.clone()].iter_mut().zip(&k.qkv[qkv_at(j, 1, h)]) {
                        *x += dsv * kv;
                    }
                    for (x, &qv) in dk[rj.clone()].iter_mut().zip(qi) {
                        *x += dsv * qv;
                    }
                    for (x, &g) in dv[rj].iter_mut().zip(dorow) {
                        *x += a * g;
                    }
                }
            }
        }
        let mut dqkv = Vec::with_capacity(t * 3 * d);
        for i in 0..t {
            for m in [&dq, &dk, &dv] {
                dqkv.extend_from_slice(&m[i * d..(i + 1) * d]);
            }
        }
        mm_tn_acc(&k.h1, &dqkv, &mut grad[li.qkv_w.clone()], d, t, 3 * d);
        col_sum_acc(&dqkv, &mut grad[li.qkv_b.clone()], t, 3 * d);
        let mut dh1 = vec![T::zero(); t * d];
        mm_nt_acc(&dqkv, self.w(&li.qkv_w), &mut dh1, t, 3 * d, d);
        let (dg, db) = pair_mut(grad, &li.ln1_g, &li.ln1_b);
        add_in_place(&mut dx2, &layer_norm_backward(&dh1, &k.ln1, self.w(&li.ln1_g), dg, db, t, d));
        dx2
    }

    fn stem_backward(&self, k: &StemCache<T>, dz: &[T], grad: &mut [T]) {
        let c = self.cfg;
        let ix = self.idx;
        let (t, g, p) = (c.seq_len, c.grid, c.pooled());

        mm_tn_acc(&k.gap, dz, &mut grad[ix.proj_w.clone()], c.conv2, t, c.d_model);
        col_sum_acc(dz, &mut grad[ix.proj_b.clone()], t, c.d_model);
        let mut dgap = vec![T::zero(); t * c.conv2];
        mm_nt_acc(dz, self.w(&ix.proj_w), &mut dgap, t, c.d_model, c.conv2);

        let inv = T::one() / T::c((p * p) as f64);
        let mut dpre2 = vec![T::zero(); k.act2.len()];
        let per_frame = p * p * c.conv2;
        for ((dframe, aframe), g) in dpre2.chunks_mut(per_frame).zip(k.act2.chunks(per_frame)).zip(dgap.chunks(c.conv2)) {
            for (dpix, apix) in dframe.chunks_mut(c.conv2).zip(aframe.chunks(c.conv2)) {
                for ((dv, &a), &gv) in dpix.iter_mut().zip(apix).zip(g) {
                    if a > T::zero() {
                        *dv = gv * inv;
                    }
                }
            }
        }
        mm_tn_acc(&k.cols2, &dpre2, &mut grad[ix.conv2_w.clone()], 9 * c.conv1, t * p * p, c.conv2);
        col_sum_acc(&dpre2, &mut grad[ix.conv2_b.clone()], t * p * p, c.conv2);
        let mut dcols2 = vec![T::zero(); k.cols2.len()];
        mm_nt_acc(&dpre2, self.w(&ix.conv2_w), &mut dcols2, t * p * p, c.conv2, 9 * c.conv1);
        let dpooled = col2im(&dcols2, t, p, p, c.conv1);

        let mut dpre1 = vec![T::zero(); k.act1.len()];
        for (&src, &dv) in k.pool_arg.iter().zip(&dpooled) {
            if k.act1[src] > T::zero() {
                dpre1[src] += dv;
            }
        }
        mm_tn_acc(&k.cols1, &dpre1, &mut grad[ix.conv1_w.clone()], 9, t * g * g, c.conv1);
        col_sum_acc(&dpre1, &mut grad[ix.conv1_b.clone()], t * g * g, c.conv1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cross_entropy_grad, Model, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> HybridConfig {
        HybridConfig {
            seq_len: 5,
            grid: 6,
            conv1: 3,
            conv2: 4,
            d_model: 8,
            heads: 2,
            ffn: 12,
            layers: 2,
            head_hidden: 6,
            classes: 15,
        }
    }

    fn input(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-0.2..1.2)).collect()
    }

    fn model(cfg: HybridConfig, seed: u64) -> Model<f64> {
        Model::init(ModelConfig::Hybrid(cfg), seed)
    }

    /// Direct nested-loop 3×3 same convolution, HWIO kernel.
    fn naive_conv(x: &[f64], h: usize, w: usize, cin: usize, k: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
        let mut y = vec![0.0; h * w * cout];
        for r in 0..h as isize {
            for c in 0..w as isize {
                for o in 0..cout {
                    let mut s = b[o];
                    for kr in -1..=1isize {
                        for kc in -1..=1isize {
                            let (rr, cc) = (r + kr, c + kc);
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                continue;
                            }
                            for i in 0..cin {
                                let xv = x[((rr as usize) * w + cc as usize) * cin + i];
                                let kv = k[(((kr + 1) as usize * 3 + (kc + 1) as usize) * cin + i) * cout + o];
                                s += xv * kv;
                            }
                        }
                    }
                    y[(r as usize * w + c as usize) * cout + o] = s;
                }
            }
        }
        y
    }

    #[test]
    fn im2col_convolution_matches_nested_loops() {
        let (h, w, cin, cout) = (5, 4, 3, 2);
        let x = input(h * w * cin, 1);
        let k = input(9 * cin * cout, 2);
        let b = vec![0.1, -0.3];
        let cols = im2col(&x, 1, h, w, cin);
        let got = affine(&cols, &k, &b, h * w, 9 * cin, cout);
        let want = naive_conv(&x, h, w, cin, &k, &b, cout);
        assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (f, h, w, c) = (2, 4, 3, 2);
        let x = input(f * h * w * c, 3);
        let y = input(f * h * w * 9 * c, 4);
        let lhs: f64 = im2col(&x, f, h, w, c).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&col2im(&y, f, h, w, c)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn max_pool_picks_block_maximum() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        let (y, arg) = max_pool(&x, 1, 4, 4, 1);
        assert_eq!(y.len(), 4);
        for (o, &a) in y.iter().zip(&arg) {
            assert_eq!(*o, x[a]);
        }
        assert_eq!(y[0], [x[0], x[1], x[4], x[5]].into_iter().fold(f64::MIN, f64::max));
    }

    #[test]
    fn standard_config_parameter_count() {
        let m: Model<f32> = Model::zeroed(ModelConfig::Hybrid(HybridConfig::default()));
        let stem = 9 * 16 + 16 + 9 * 16 * 32 + 32 + 32 * 64 + 64;
        let layer = 4 * 64 + 64 * 192 + 192 + 64 * 64 + 64 + 64 * 128 + 128 + 128 * 64 + 64;
        let head = 2 * 64 + 64 * 64 + 64 + 64 * 15 + 15;
        assert_eq!(m.params().len(), stem + 4 * layer + head);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = tiny();
        let m = model(cfg, 5);
        let tr = m.hybrid().unwrap().forward(&input(cfg.seq_len * 36, 6));
        for layer in &tr.layers {
            for row in layer.attn.chunks(cfg.seq_len) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&a| a >= 0.0));
            }
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant_without_positions() {
        let cfg = tiny();
        let m = model(cfg, 7);
        let h = m.hybrid().unwrap();
        let (t, d) = (cfg.seq_len, cfg.d_model);
        let x = input(t * d, 8);
        let perm = [3, 0, 4, 1, 2];
        let px: Vec<f64> = perm.iter().flat_map(|&i| x[i * d..(i + 1) * d].to_vec()).collect();
        let (y, _) = h.encoder_forward(&x);
        let (py, _) = h.encoder_forward(&px);
        for (k, &i) in perm.iter().enumerate() {
            for j in 0..d {
                assert!((py[k * d + j] - y[i * d + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weight_encoder_is_identity() {
        let cfg = tiny();
        let m: Model<f64> = Model::zeroed(ModelConfig::Hybrid(cfg));
        let x = input(cfg.seq_len * cfg.d_model, 9);
        let (y, _) = m.hybrid().unwrap().encoder_forward(&x);
        assert_eq!(y, x);
    }

    #[test]
    fn zero_parameters_give_uniform_output() {
        let m: Model<f64> = Model::zeroed(ModelConfig::Hybrid(HybridConfig::default()));
        let p = m.predict(&input(3000, 10)).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 15.0).abs() < 1e-12));
        let (loss, _) = m.loss_and_grad(&input(3000, 10), 4, 1.0).unwrap();
        assert!((loss - 15f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dead_head_blocks_upstream_gradient() {
        let cfg = tiny();
        let mut m = model(cfg, 11);
        m.tensor_mut("head.b1").unwrap().fill(-1e3);
        let (_, g) = m.loss_and_grad(&input(cfg.seq_len * 36, 12), 2, 1.0).unwrap();
        for spec in &m.layout().tensors {
            let norm: f64 = g[spec.range.clone()].iter().map(|v| v * v).sum();
            if spec.name == "head.b2" {
                assert!(norm > 0.0);
            } else {
                assert_eq!(norm, 0.0, "{}", spec.name);
            }
        }
    }

    #[test]
    fn loss_scale_scales_gradient() {
        let cfg = tiny();
        let m = model(cfg, 13);
        let x = input(cfg.seq_len * 36, 14);
        let (l1, g1) = m.loss_and_grad(&x, 7, 1.0).unwrap();
        let (l2, g2) = m.loss_and_grad(&x, 7, 2.0).unwrap();
        assert_eq!(l2, 2.0 * l1);
        assert!(g1.iter().zip(&g2).all(|(a, b)| *b == 2.0 * a));
    }

    #[test]
    fn logit_gradient_is_softmax_minus_onehot() {
        let (_, g) = cross_entropy_grad(&[0.0f64; 15], 0, 1.0);
        assert!((g[0] + 14.0 / 15.0).abs() < 1e-12);
        assert!(g[1..].iter().all(|&v| (v - 1.0 / 15.0).abs() < 1e-12));
    }
}
