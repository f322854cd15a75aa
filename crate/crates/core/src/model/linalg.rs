//! Dense kernels over row-major slices.
//!
//! Every matrix product sums in ascending inner index, so results do not
//! depend on blocking or on the SIMD width the compiler picks.

use super::Real;

const MR: usize = 4;

/// `c (m×n) += A · b (k×n)` where `A(i, p) = a[i·rs + p·cs]`.
///
/// Every output sums its products in ascending `p`, starting from the
/// existing value of `c`, whatever the blocking or vector width.
fn gemm_acc<T: Real>(a: &[T], rs: usize, cs: usize, b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX, checked just above.
        unsafe { gemm_acc_avx(a, rs, cs, b, c, m, k, n) };
        return;
    }
    gemm_block::<T, 8>(a, rs, cs, b, c, m, k, n);
}

/// The same kernel compiled for 256-bit vectors. Separate multiply and add
/// (no FMA) keep the rounding identical to the baseline path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
fn gemm_acc_avx<T: Real>(a: &[T], rs: usize, cs: usize, b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    gemm_block::<T, 16>(a, rs, cs, b, c, m, k, n);
}

#[inline(always)]
fn gemm_block<T: Real, const NR: usize>(a: &[T], rs: usize, cs: usize, b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let (mb, nb) = (m - m % MR, n - n % NR);
    for i0 in (0..mb).step_by(MR) {
        for j0 in (0..nb).step_by(NR) {
            let mut acc = [[T::zero(); NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i0 + r) * n + j0..][..NR]);
            }
            for p in 0..k {
                let bp: &[T; NR] = b[p * n + j0..][..NR].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i0 + r) * rs + p * cs];
                    for q in 0..NR {
                        row[q] += av * bp[q];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i0 + r) * n + j0..][..NR].copy_from_slice(row);
            }
        }
        for r in i0..i0 + MR {
            gemm_row_tail(a, rs, cs, b, c, r, k, n, nb);
        }
    }
    for r in mb..m {
        gemm_row_tail(a, rs, cs, b, c, r, k, n, 0);
    }
}

/// Columns `j0..n` of output row `i`.
#[inline(always)]
fn gemm_row_tail<T: Real>(a: &[T], rs: usize, cs: usize, b: &[T], c: &mut [T], i: usize, k: usize, n: usize, j0: usize) {
    if j0 == n {
        return;
    }
    let crow = &mut c[i * n + j0..(i + 1) * n];
    for p in 0..k {
        let av = a[i * rs + p * cs];
        for (cv, &bv) in crow.iter_mut().zip(&b[p * n + j0..(p + 1) * n]) {
            *cv += av * bv;
        }
    }
}

/// `c (m×n) += a (m×k) · b (k×n)`.
pub fn mm_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    gemm_acc(a, k, 1, b, c, m, k, n);
}

/// `c (m×n) = a (m×k) · b (k×n)`.
pub fn mm<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    c[..m * n].fill(T::zero());
    mm_acc(a, b, c, m, k, n);
}

/// `c (m×n) = a (m×k) · b (k×n) + bias (n)` broadcast over rows.
pub fn affine<T: Real>(a: &[T], w: &[T], bias: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = Vec::with_capacity(m * n);
    for _ in 0..m {
        c.extend_from_slice(&bias[..n]);
    }
    mm_acc(a, w, &mut c, m, k, n);
    c
}

/// `c (m×n) += aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub fn mm_tn_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    gemm_acc(a, 1, m, b, c, m, k, n);
}

/// Transpose of a `rows×cols` matrix.
pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// `c (m×n) += a (m×k) · bᵀ` where `b` is `n×k`.
pub fn mm_nt_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let bt = transpose(&b[..n * k], n, k);
    mm_acc(a, &bt, c, m, k, n);
}

/// Sums the rows of an `m×n` matrix into `out`.
pub fn col_sum_acc<T: Real>(a: &[T], out: &mut [T], m: usize, n: usize) {
    for i in 0..m {
        for (o, &v) in out[..n].iter_mut().zip(&a[i * n..(i + 1) * n]) {
            *o += v;
        }
    }
}

pub fn softmax_in_place<T: Real>(x: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// `ln Σ exp(x)`, stable.
pub fn log_sum_exp<T: Real>(x: &[T]) -> T {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = x.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
    max + sum.ln()
}

pub const LN_EPS: f64 = 1e-5;

/// Normalization statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Row-wise layer normalization of an `m×n` matrix.
pub fn layer_norm<T: Real>(x: &[T], gamma: &[T], beta: &[T], m: usize, n: usize) -> (Vec<T>, LnCache<T>) {
    let eps = T::c(LN_EPS);
    let nf = T::c(n as f64);
    let mut y = vec![T::zero(); m * n];
    let mut xhat = vec![T::zero(); m * n];
    let mut rstd = vec![T::zero(); m];
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let mean = row.iter().fold(T::zero(), |s, &v| s + v) / nf;
        let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / nf;
        let r = T::one() / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..n {
            let h = (row[j] - mean) * r;
            xhat[i * n + j] = h;
            y[i * n + j] = h * gamma[j] + beta[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Backward of [`layer_norm`]; accumulates parameter gradients and returns
/// the input gradient.
pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &LnCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    m: usize,
    n: usize,
) -> Vec<T> {
    let nf = T::c(n as f64);
    let mut dx = vec![T::zero(); m * n];
    let mut dxhat = vec![T::zero(); n];
    for i in 0..m {
        let dyr = &dy[i * n..(i + 1) * n];
        let xh = &cache.xhat[i * n..(i + 1) * n];
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..n {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            dxhat[j] = dyr[j] * gamma[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
        }
        mean_d /= nf;
        mean_dx /= nf;
        let r = cache.rstd[i];
        for j in 0..n {
            dx[i * n + j] = r * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::c(GELU_C);
    let a = T::c(GELU_A);
    let half = T::c(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::c(GELU_C);
    let a = T::c(GELU_A);
    let half = T::c(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::c(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn blocked_kernel_is_bit_identical_to_ascending_sum() {
        for (m, k, n) in [(1, 1, 1), (4, 3, 8), (9, 17, 21), (13, 5, 3), (30, 64, 192)] {
            let a: Vec<f32> = (0..m * k).map(|i| ((i * 31 % 97) as f32 - 48.0) / 7.0).collect();
            let b: Vec<f32> = (0..k * n).map(|i| ((i * 17 % 89) as f32 - 44.0) / 13.0).collect();
            let init: Vec<f32> = (0..m * n).map(|i| (i % 5) as f32 * 0.25).collect();
            let mut want = init.clone();
            for i in 0..m {
                for j in 0..n {
                    for p in 0..k {
                        want[i * n + j] += a[i * k + p] * b[p * n + j];
                    }
                }
            }
            let mut got = init.clone();
            mm_acc(&a, &b, &mut got, m, k, n);
            assert_eq!(got, want, "{m}x{k}x{n}");
            let mut got_tn = init.clone();
            mm_tn_acc(&transpose(&a, m, k), &b, &mut got_tn, m, k, n);
            assert_eq!(got_tn, want, "tn {m}x{k}x{n}");
        }
    }

    fn seq(n: usize, s: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + s) * 0.37).sin()).collect()
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let (m, k, n) = (5, 7, 3);
        let a = seq(m * k, 1.0);
        let b = seq(k * n, 2.0);
        let want = naive(&a, &b, m, k, n);
        let mut c = vec![0.0; m * n];
        mm(&a, &b, &mut c, m, k, n);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let at = transpose(&a, m, k);
        let mut c2 = vec![0.0; m * n];
        mm_tn_acc(&at, &b, &mut c2, m, k, n);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let bt = transpose(&b, k, n);
        let mut c3 = vec![0.0; m * n];
        mm_nt_acc(&a, &bt, &mut c3, m, k, n);
        assert!(c3.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut a = vec![1.0f64, 2.0, -3.0, 0.5];
        let mut b: Vec<f64> = a.iter().map(|v| v + 100.0).collect();
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for x in [-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = seq(12, 0.3);
        let g = vec![1.0; 4];
        let b = vec![0.0; 4];
        let (y, _) = layer_norm(&x, &g, &b, 3, 4);
        for r in y.chunks(4) {
            let mean: f64 = r.iter().sum::<f64>() / 4.0;
            let var: f64 = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
