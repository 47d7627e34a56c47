//! Hot numeric loops. All kernels use fixed iteration orders so results are
//! bitwise deterministic for identical inputs.

use super::Scalar;

const LANES: usize = 8;

/// Dot product with 8 independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<E: Scalar>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / LANES;
    let mut acc = [E::zero(); LANES];
    for i in 0..chunks {
        let base = i * LANES;
        for l in 0..LANES {
            acc[l] = acc[l] + a[base + l] * b[base + l];
        }
    }
    let mut tail = E::zero();
    for i in chunks * LANES..n {
        tail = tail + a[i] * b[i];
    }
    let mut sum = tail;
    for l in 0..LANES {
        sum = sum + acc[l];
    }
    sum
}

/// y += alpha * x
#[inline]
pub fn axpy<E: Scalar>(alpha: E, x: &[E], y: &mut [E]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] = y[i] + alpha * x[i];
    }
}

/// out[b, j] = dot(x[b, :], w[j, :]) + bias[j]   (w is [m, n] row-major)
pub fn dense_forward<E: Scalar>(
    x: &[E],
    w: &[E],
    bias: Option<&[E]>,
    batch: usize,
    n_in: usize,
    n_out: usize,
    out: &mut [E],
) {
    debug_assert_eq!(x.len(), batch * n_in);
    debug_assert_eq!(w.len(), n_out * n_in);
    debug_assert_eq!(out.len(), batch * n_out);
    for b in 0..batch {
        let xr = &x[b * n_in..(b + 1) * n_in];
        let or = &mut out[b * n_out..(b + 1) * n_out];
        for j in 0..n_out {
            let mut v = dot(xr, &w[j * n_in..(j + 1) * n_in]);
            if let Some(bias) = bias {
                v = v + bias[j];
            }
            or[j] = v;
        }
    }
}

/// dx[b, :] += sum_j dy[b, j] * w[j, :]
pub fn dense_backward_input<E: Scalar>(
    dy: &[E],
    w: &[E],
    batch: usize,
    n_in: usize,
    n_out: usize,
    dx: &mut [E],
) {
    for b in 0..batch {
        let dyr = &dy[b * n_out..(b + 1) * n_out];
        let dxr = &mut dx[b * n_in..(b + 1) * n_in];
        for j in 0..n_out {
            axpy(dyr[j], &w[j * n_in..(j + 1) * n_in], dxr);
        }
    }
}

/// dw[j, :] += sum_b dy[b, j] * x[b, :]
pub fn dense_backward_weights<E: Scalar>(
    dy: &[E],
    x: &[E],
    batch: usize,
    n_in: usize,
    n_out: usize,
    dw: &mut [E],
) {
    for b in 0..batch {
        let dyr = &dy[b * n_out..(b + 1) * n_out];
        let xr = &x[b * n_in..(b + 1) * n_in];
        for j in 0..n_out {
            axpy(dyr[j], xr, &mut dw[j * n_in..(j + 1) * n_in]);
        }
    }
}

/// db[j] += sum_b dy[b, j]
pub fn dense_backward_bias<E: Scalar>(dy: &[E], batch: usize, n_out: usize, db: &mut [E]) {
    for b in 0..batch {
        for j in 0..n_out {
            db[j] = db[j] + dy[b * n_out + j];
        }
    }
}

/// Valid-padding stride-1 cross-correlation.
/// x: [B, C, H, W], k: [K, C, kh, kw], bias: [K], out: [B, K, OH, OW]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<E: Scalar>(
    x: &[E],
    k: &[E],
    bias: &[E],
    batch: usize,
    (c_in, h, w): (usize, usize, usize),
    (k_out, kh, kw): (usize, usize, usize),
    out: &mut [E],
) {
    let oh = h - kh + 1;
    let ow = w - kw + 1;
    debug_assert_eq!(out.len(), batch * k_out * oh * ow);
    for b in 0..batch {
        let xb = &x[b * c_in * h * w..(b + 1) * c_in * h * w];
        let ob = &mut out[b * k_out * oh * ow..(b + 1) * k_out * oh * ow];
        for ko in 0..k_out {
            let oc = &mut ob[ko * oh * ow..(ko + 1) * oh * ow];
            oc.fill(bias[ko]);
            for c in 0..c_in {
                let xc = &xb[c * h * w..(c + 1) * h * w];
                for i in 0..kh {
                    for j in 0..kw {
                        let kv = k[((ko * c_in + c) * kh + i) * kw + j];
                        for y in 0..oh {
                            let xrow = &xc[(y + i) * w + j..(y + i) * w + j + ow];
                            axpy(kv, xrow, &mut oc[y * ow..(y + 1) * ow]);
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of conv2d_forward w.r.t. input, kernels and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<E: Scalar>(
    dy: &[E],
    x: &[E],
    k: &[E],
    batch: usize,
    (c_in, h, w): (usize, usize, usize),
    (k_out, kh, kw): (usize, usize, usize),
    dx: Option<&mut [E]>,
    dk: Option<&mut [E]>,
    db: Option<&mut [E]>,
) {
    let oh = h - kh + 1;
    let ow = w - kw + 1;
    if let Some(db) = db {
        for b in 0..batch {
            for ko in 0..k_out {
                let base = (b * k_out + ko) * oh * ow;
                let mut s = E::zero();
                for idx in 0..oh * ow {
                    s = s + dy[base + idx];
                }
                db[ko] = db[ko] + s;
            }
        }
    }
    if let Some(dk) = dk {
        for b in 0..batch {
            let xb = &x[b * c_in * h * w..(b + 1) * c_in * h * w];
            let dyb = &dy[b * k_out * oh * ow..(b + 1) * k_out * oh * ow];
            for ko in 0..k_out {
                let dyc = &dyb[ko * oh * ow..(ko + 1) * oh * ow];
                for c in 0..c_in {
                    let xc = &xb[c * h * w..(c + 1) * h * w];
                    for i in 0..kh {
                        for j in 0..kw {
                            let mut s = E::zero();
                            for y in 0..oh {
                                s = s + dot(
                                    &dyc[y * ow..(y + 1) * ow],
                                    &xc[(y + i) * w + j..(y + i) * w + j + ow],
                                );
                            }
                            let idx = ((ko * c_in + c) * kh + i) * kw + j;
                            dk[idx] = dk[idx] + s;
                        }
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..batch {
            let dxb = &mut dx[b * c_in * h * w..(b + 1) * c_in * h * w];
            let dyb = &dy[b * k_out * oh * ow..(b + 1) * k_out * oh * ow];
            for ko in 0..k_out {
                let dyc = &dyb[ko * oh * ow..(ko + 1) * oh * ow];
                for c in 0..c_in {
                    let dxc = &mut dxb[c * h * w..(c + 1) * h * w];
                    for i in 0..kh {
                        for j in 0..kw {
                            let kv = k[((ko * c_in + c) * kh + i) * kw + j];
                            for y in 0..oh {
                                axpy(
                                    kv,
                                    &dyc[y * ow..(y + 1) * ow],
                                    &mut dxc[(y + i) * w + j..(y + i) * w + j + ow],
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 max pooling; argmax stores the flat input index per output
/// element (first-found on ties).
pub fn maxpool2d_forward<E: Scalar>(
    x: &[E],
    batch: usize,
    (c, h, w): (usize, usize, usize),
    out: &mut [E],
    argmax: &mut Vec<u32>,
) {
    let oh = h / 2;
    let ow = w / 2;
    argmax.clear();
    argmax.reserve(batch * c * oh * ow);
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let i0 = base + (2 * y) * w + 2 * xo;
                    let cand = [i0, i0 + 1, i0 + w, i0 + w + 1];
                    let mut best = cand[0];
                    let mut bv = x[cand[0]];
                    for &ci in &cand[1..] {
                        if x[ci] > bv {
                            bv = x[ci];
                            best = ci;
                        }
                    }
                    out[((b * c + ch) * oh + y) * ow + xo] = bv;
                    argmax.push(best as u32);
                }
            }
        }
    }
}

/// Per-column maximum over groups of `rows` consecutive rows.
/// x: [groups*rows, cols] -> out: [groups, cols], argmax: row within group.
pub fn rowmax_forward<E: Scalar>(
    x: &[E],
    groups: usize,
    rows: usize,
    cols: usize,
    out: &mut [E],
    argmax: &mut Vec<u32>,
) {
    argmax.clear();
    argmax.resize(groups * cols, 0);
    for g in 0..groups {
        let og = &mut out[g * cols..(g + 1) * cols];
        let ag = &mut argmax[g * cols..(g + 1) * cols];
        og.copy_from_slice(&x[g * rows * cols..g * rows * cols + cols]);
        for r in 1..rows {
            let xr = &x[(g * rows + r) * cols..(g * rows + r + 1) * cols];
            for cc in 0..cols {
                if xr[cc] > og[cc] {
                    og[cc] = xr[cc];
                    ag[cc] = r as u32;
                }
            }
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<E: Scalar>(x: &[E], rows: usize, cols: usize, out: &mut [E]) {
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let or = &mut out[r * cols..(r + 1) * cols];
        let mut m = xr[0];
        for &v in &xr[1..] {
            if v > m {
                m = v;
            }
        }
        let mut sum = E::zero();
        for (o, &v) in or.iter_mut().zip(xr.iter()) {
            let e = (v - m).exp();
            *o = e;
            sum = sum + e;
        }
        let inv = E::one() / sum;
        for o in or.iter_mut() {
            *o = *o * inv;
        }
    }
}
