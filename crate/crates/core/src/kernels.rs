//! Row-major kernels for a single sequence, with hand-written backward passes.
//!
//! Shapes are passed explicitly; `t` is the number of rows (positions).

const LN_EPS: f64 = 1e-5;

/// `out[t×o] = inp[t×i] · w[o×i]ᵀ (+ b)`.
pub fn linear_forward(
    out: &mut [f64],
    inp: &[f64],
    w: &[f64],
    b: Option<&[f64]>,
    t: usize,
    i: usize,
    o: usize,
) {
    debug_assert_eq!(out.len(), t * o);
    debug_assert_eq!(inp.len(), t * i);
    debug_assert_eq!(w.len(), o * i);
    let beta = match b {
        Some(b) => {
            for row in out.chunks_exact_mut(o) {
                row.copy_from_slice(b);
            }
            1.0
        }
        None => 0.0,
    };
    if t == 0 {
        return;
    }
    // SAFETY: the slices are at least as long as the strides address, checked above.
    unsafe {
        matrixmultiply::dgemm(
            t,
            i,
            o,
            1.0,
            inp.as_ptr(),
            i as isize,
            1,
            w.as_ptr(),
            1,
            i as isize,
            beta,
            out.as_mut_ptr(),
            o as isize,
            1,
        );
    }
}

/// Accumulating backward pass of [`linear_forward`].
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    dinp: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
    dout: &[f64],
    inp: &[f64],
    w: &[f64],
    t: usize,
    i: usize,
    o: usize,
) {
    debug_assert_eq!(dout.len(), t * o);
    if t == 0 {
        return;
    }
    if let Some(dinp) = dinp {
        debug_assert_eq!(dinp.len(), t * i);
        // SAFETY: shapes checked above.
        unsafe {
            matrixmultiply::dgemm(
                t,
                o,
                i,
                1.0,
                dout.as_ptr(),
                o as isize,
                1,
                w.as_ptr(),
                i as isize,
                1,
                1.0,
                dinp.as_mut_ptr(),
                i as isize,
                1,
            );
        }
    }
    if let Some(dw) = dw {
        debug_assert_eq!(dw.len(), o * i);
        // SAFETY: shapes checked above.
        unsafe {
            matrixmultiply::dgemm(
                o,
                t,
                i,
                1.0,
                dout.as_ptr(),
                1,
                o as isize,
                inp.as_ptr(),
                i as isize,
                1,
                1.0,
                dw.as_mut_ptr(),
                i as isize,
                1,
            );
        }
    }
    if let Some(db) = db {
        for row in dout.chunks_exact(o) {
            for (b, d) in db.iter_mut().zip(row) {
                *b += d;
            }
        }
    }
}

pub fn layernorm_forward(
    out: &mut [f64],
    mean: &mut [f64],
    rstd: &mut [f64],
    inp: &[f64],
    w: &[f64],
    b: &[f64],
    c: usize,
) {
    for (r, (x, y)) in inp.chunks_exact(c).zip(out.chunks_exact_mut(c)).enumerate() {
        let m = x.iter().sum::<f64>() / c as f64;
        let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..c {
            y[j] = (x[j] - m) * s * w[j] + b[j];
        }
        mean[r] = m;
        rstd[r] = s;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward(
    dinp: &mut [f64],
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
    dout: &[f64],
    inp: &[f64],
    w: &[f64],
    mean: &[f64],
    rstd: &[f64],
    c: usize,
) {
    let mut norm = vec![0.0; c];
    let mut dnorm = vec![0.0; c];
    for (r, ((x, dy), dx)) in inp
        .chunks_exact(c)
        .zip(dout.chunks_exact(c))
        .zip(dinp.chunks_exact_mut(c))
        .enumerate()
    {
        let (m, s) = (mean[r], rstd[r]);
        let mut dnorm_mean = 0.0;
        let mut dnorm_norm_mean = 0.0;
        for j in 0..c {
            norm[j] = (x[j] - m) * s;
            dnorm[j] = w[j] * dy[j];
            dnorm_mean += dnorm[j];
            dnorm_norm_mean += dnorm[j] * norm[j];
        }
        dnorm_mean /= c as f64;
        dnorm_norm_mean /= c as f64;
        if let Some(dw) = dw.as_deref_mut() {
            for j in 0..c {
                dw[j] += norm[j] * dy[j];
            }
        }
        if let Some(db) = db.as_deref_mut() {
            for j in 0..c {
                db[j] += dy[j];
            }
        }
        for j in 0..c {
            dx[j] += (dnorm[j] - dnorm_mean - norm[j] * dnorm_norm_mean) * s;
        }
    }
}

const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu_forward(out: &mut [f64], inp: &[f64]) {
    for (y, &x) in out.iter_mut().zip(inp) {
        let cube = 0.044715 * x * x * x;
        *y = 0.5 * x * (1.0 + (GELU_SCALE * (x + cube)).tanh());
    }
}

pub fn gelu_backward(dinp: &mut [f64], inp: &[f64], dout: &[f64]) {
    for ((dx, &x), &dy) in dinp.iter_mut().zip(inp).zip(dout) {
        let cube = 0.044715 * x * x * x;
        let arg = GELU_SCALE * (x + cube);
        let th = arg.tanh();
        let sech2 = 1.0 - th * th;
        let local =
            0.5 * (1.0 + th) + 0.5 * x * sech2 * GELU_SCALE * (1.0 + 3.0 * 0.044715 * x * x);
        *dx += local * dy;
    }
}

/// Causal multi-head attention over `qkv[t×3c]` (q, k, v concatenated per row).
/// Writes `out[t×c]` and the attention probabilities `att[nh×t×t]`.
pub fn attention_forward(
    out: &mut [f64],
    att: &mut [f64],
    qkv: &[f64],
    t: usize,
    c: usize,
    nh: usize,
) {
    let hs = c / nh;
    let scale = 1.0 / (hs as f64).sqrt();
    let c3 = 3 * c;
    out.fill(0.0);
    att.fill(0.0);
    for h in 0..nh {
        for ti in 0..t {
            let q = &qkv[ti * c3 + h * hs..ti * c3 + (h + 1) * hs];
            let row = &mut att[(h * t + ti) * t..(h * t + ti + 1) * t];
            let mut maxv = f64::NEG_INFINITY;
            for t2 in 0..=ti {
                let k = &qkv[t2 * c3 + c + h * hs..t2 * c3 + c + (h + 1) * hs];
                let s: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                row[t2] = s;
                maxv = maxv.max(s);
            }
            let mut sum = 0.0;
            for v in row.iter_mut().take(ti + 1) {
                *v = (*v - maxv).exp();
                sum += *v;
            }
            for v in row.iter_mut().take(ti + 1) {
                *v /= sum;
            }
            let o = &mut out[ti * c + h * hs..ti * c + (h + 1) * hs];
            for t2 in 0..=ti {
                let v = &qkv[t2 * c3 + 2 * c + h * hs..t2 * c3 + 2 * c + (h + 1) * hs];
                let a = row[t2];
                for (oo, vv) in o.iter_mut().zip(v) {
                    *oo += a * vv;
                }
            }
        }
    }
}

pub fn attention_backward(
    dqkv: &mut [f64],
    dout: &[f64],
    qkv: &[f64],
    att: &[f64],
    t: usize,
    c: usize,
    nh: usize,
) {
    let hs = c / nh;
    let scale = 1.0 / (hs as f64).sqrt();
    let c3 = 3 * c;
    let mut datt = vec![0.0; t];
    for h in 0..nh {
        for ti in 0..t {
            let row = &att[(h * t + ti) * t..(h * t + ti + 1) * t];
            let dout_t = &dout[ti * c + h * hs..ti * c + (h + 1) * hs];
            for t2 in 0..=ti {
                let voff = t2 * c3 + 2 * c + h * hs;
                let v = &qkv[voff..voff + hs];
                datt[t2] = v.iter().zip(dout_t).map(|(a, b)| a * b).sum();
                let a = row[t2];
                for (dv, d) in dqkv[voff..voff + hs].iter_mut().zip(dout_t) {
                    *dv += a * d;
                }
            }
            let dot: f64 = (0..=ti).map(|t2| row[t2] * datt[t2]).sum();
            let qoff = ti * c3 + h * hs;
            for t2 in 0..=ti {
                let dpre = row[t2] * (datt[t2] - dot) * scale;
                if dpre == 0.0 {
                    continue;
                }
                let koff = t2 * c3 + c + h * hs;
                for j in 0..hs {
                    dqkv[qoff + j] += qkv[koff + j] * dpre;
                    dqkv[koff + j] += qkv[qoff + j] * dpre;
                }
            }
        }
    }
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
