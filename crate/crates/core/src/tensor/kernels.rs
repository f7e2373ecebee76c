//! Raw compute loops shared by forward and backward passes.
//!
//! All loops are plain sequential iterations with a fixed order, so results
//! are bit-identical across runs of the same binary.

use super::scalar::Scalar;

/// Logical matrix product `C (+)= A(m×k) · B(k×n)` where the physical layouts
/// of `a` and `b` are transposed when `ta`/`tb` are set.
///
/// `ta == false`: `a` is `[m, k]` row-major; `ta == true`: `a` is `[k, m]`.
/// `tb == false`: `b` is `[k, n]`; `tb == true`: `b` is `[n, k]`.
pub fn matmul<E: Scalar>(
    a: &[E],
    b: &[E],
    ta: bool,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    out: &mut [E],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if !accumulate {
        out.fill(E::ZERO);
    }
    match (ta, tb) {
        (false, false) => {
            // C[i,j] += sum_p a[i,p] * b[p,j]; p-middle keeps rows contiguous.
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                let out_row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a_row[p];
                    let b_row = &b[p * n..(p + 1) * n];
                    for j in 0..n {
                        out_row[j] += av * b_row[j];
                    }
                }
            }
        }
        (false, true) => {
            // C[i,j] += dot(a_row_i, b_row_j)
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                let out_row = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    let b_row = &b[j * k..(j + 1) * k];
                    let mut acc = E::ZERO;
                    for p in 0..k {
                        acc += a_row[p] * b_row[p];
                    }
                    out_row[j] += acc;
                }
            }
        }
        (true, false) => {
            // a physical [k, m]: C[i,j] += sum_p a[p,i] * b[p,j]
            for p in 0..k {
                let a_row = &a[p * m..(p + 1) * m];
                let b_row = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = a_row[i];
                    let out_row = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        out_row[j] += av * b_row[j];
                    }
                }
            }
        }
        (true, true) => {
            // C[i,j] += sum_p a[p,i] * b[j,p]
            for i in 0..m {
                for j in 0..n {
                    let b_row = &b[j * k..(j + 1) * k];
                    let mut acc = E::ZERO;
                    for p in 0..k {
                        acc += a[p * m + i] * b_row[p];
                    }
                    out[i * n + j] += acc;
                }
            }
        }
    }
}

/// Dimensions of a 1-D convolution; input/output are `[frames, channels]`
/// row-major, weights are `[c_out, k, c_in]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub t_in: usize,
    pub c_in: usize,
    pub t_out: usize,
    pub c_out: usize,
    pub k: usize,
}

pub fn conv1d_out_len(t_in: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = t_in + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

pub fn conv1d_forward<E: Scalar>(
    x: &[E],
    w: &[E],
    bias: &[E],
    stride: usize,
    pad: usize,
    d: ConvDims,
    out: &mut [E],
) {
    for to in 0..d.t_out {
        let base = (to * stride) as isize - pad as isize;
        let out_row = &mut out[to * d.c_out..(to + 1) * d.c_out];
        out_row.copy_from_slice(bias);
        for kk in 0..d.k {
            let ti = base + kk as isize;
            if ti < 0 || ti >= d.t_in as isize {
                continue;
            }
            let x_row = &x[ti as usize * d.c_in..(ti as usize + 1) * d.c_in];
            for oc in 0..d.c_out {
                let w_row = &w[(oc * d.k + kk) * d.c_in..(oc * d.k + kk + 1) * d.c_in];
                let mut acc = E::ZERO;
                for ic in 0..d.c_in {
                    acc += x_row[ic] * w_row[ic];
                }
                out_row[oc] += acc;
            }
        }
    }
}

pub fn conv1d_backward<E: Scalar>(
    x: &[E],
    w: &[E],
    stride: usize,
    pad: usize,
    d: ConvDims,
    dout: &[E],
    dx: Option<&mut Vec<E>>,
    dw: Option<&mut Vec<E>>,
    db: Option<&mut Vec<E>>,
) {
    if let Some(db) = db {
        for to in 0..d.t_out {
            let g_row = &dout[to * d.c_out..(to + 1) * d.c_out];
            for oc in 0..d.c_out {
                db[oc] += g_row[oc];
            }
        }
    }
    let mut dx = dx;
    let mut dw = dw;
    for to in 0..d.t_out {
        let base = (to * stride) as isize - pad as isize;
        let g_row = &dout[to * d.c_out..(to + 1) * d.c_out];
        for kk in 0..d.k {
            let ti = base + kk as isize;
            if ti < 0 || ti >= d.t_in as isize {
                continue;
            }
            let ti = ti as usize;
            for oc in 0..d.c_out {
                let g = g_row[oc];
                if g == E::ZERO {
                    continue;
                }
                let w_off = (oc * d.k + kk) * d.c_in;
                if let Some(dx) = dx.as_deref_mut() {
                    let w_row = &w[w_off..w_off + d.c_in];
                    let dx_row = &mut dx[ti * d.c_in..(ti + 1) * d.c_in];
                    for ic in 0..d.c_in {
                        dx_row[ic] += g * w_row[ic];
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    let x_row = &x[ti * d.c_in..(ti + 1) * d.c_in];
                    let dw_row = &mut dw[w_off..w_off + d.c_in];
                    for ic in 0..d.c_in {
                        dw_row[ic] += g * x_row[ic];
                    }
                }
            }
        }
    }
}

/// Transposed 1-D convolution. Input `[t_in, c_in]`, weights `[k, c_in, c_out]`,
/// output `[t_out, c_out]` with `t_out = (t_in - 1) * stride - 2 * pad + k`.
pub fn convt1d_out_len(t_in: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let grown = (t_in - 1) * stride + k;
    if grown < 2 * pad {
        return None;
    }
    Some(grown - 2 * pad)
}

pub fn convt1d_forward<E: Scalar>(
    x: &[E],
    w: &[E],
    bias: &[E],
    stride: usize,
    pad: usize,
    d: ConvDims,
    out: &mut [E],
) {
    for to in 0..d.t_out {
        out[to * d.c_out..(to + 1) * d.c_out].copy_from_slice(bias);
    }
    for ti in 0..d.t_in {
        let x_row = &x[ti * d.c_in..(ti + 1) * d.c_in];
        for kk in 0..d.k {
            let to = (ti * stride + kk) as isize - pad as isize;
            if to < 0 || to >= d.t_out as isize {
                continue;
            }
            let out_row = &mut out[to as usize * d.c_out..(to as usize + 1) * d.c_out];
            for ic in 0..d.c_in {
                let xv = x_row[ic];
                if xv == E::ZERO {
                    continue;
                }
                let w_row = &w[(kk * d.c_in + ic) * d.c_out..(kk * d.c_in + ic + 1) * d.c_out];
                for oc in 0..d.c_out {
                    out_row[oc] += xv * w_row[oc];
                }
            }
        }
    }
}

pub fn convt1d_backward<E: Scalar>(
    x: &[E],
    w: &[E],
    stride: usize,
    pad: usize,
    d: ConvDims,
    dout: &[E],
    dx: Option<&mut Vec<E>>,
    dw: Option<&mut Vec<E>>,
    db: Option<&mut Vec<E>>,
) {
    if let Some(db) = db {
        for to in 0..d.t_out {
            let g_row = &dout[to * d.c_out..(to + 1) * d.c_out];
            for oc in 0..d.c_out {
                db[oc] += g_row[oc];
            }
        }
    }
    let mut dx = dx;
    let mut dw = dw;
    for ti in 0..d.t_in {
        let x_row = &x[ti * d.c_in..(ti + 1) * d.c_in];
        for kk in 0..d.k {
            let to = (ti * stride + kk) as isize - pad as isize;
            if to < 0 || to >= d.t_out as isize {
                continue;
            }
            let g_row = &dout[to as usize * d.c_out..(to as usize + 1) * d.c_out];
            for ic in 0..d.c_in {
                let w_off = (kk * d.c_in + ic) * d.c_out;
                if let Some(dx) = dx.as_deref_mut() {
                    let w_row = &w[w_off..w_off + d.c_out];
                    let mut acc = E::ZERO;
                    for oc in 0..d.c_out {
                        acc += g_row[oc] * w_row[oc];
                    }
                    dx[ti * d.c_in + ic] += acc;
                }
                if let Some(dw) = dw.as_deref_mut() {
                    let xv = x_row[ic];
                    let dw_row = &mut dw[w_off..w_off + d.c_out];
                    for oc in 0..d.c_out {
                        dw_row[oc] += xv * g_row[oc];
                    }
                }
            }
        }
    }
}
