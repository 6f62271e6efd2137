//! Raw numeric kernels shared by forward and backward passes.

use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes (right-aligned, equal or unit extents).
pub fn broadcast_shape(op: &str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::Shape(format!(
                "{op}: cannot broadcast {a:?} with {b:?}"
            )));
        };
    }
    Ok(out)
}

/// For every flat index of `out_shape`, the flat index into a tensor of
/// `in_shape` broadcast to it.
pub fn broadcast_offsets(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let n = out_shape.len();
    let pad = n - in_shape.len();
    let mut in_strides = vec![0usize; n];
    let mut s = 1;
    for i in (0..in_shape.len()).rev() {
        in_strides[i + pad] = if in_shape[i] == 1 { 0 } else { s };
        s *= in_shape[i];
    }
    let total: usize = out_shape.iter().product();
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for d in (0..n).rev() {
            idx[d] += 1;
            off += in_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= in_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    offsets
}

/// How a broadcast operand maps onto the output.
pub(crate) enum Bcast {
    Same,
    Scalar,
    /// Operand is a repeated trailing row of this width.
    Row(usize),
    General(Vec<usize>),
}

pub(crate) fn classify(out: &[usize], inp: &[usize]) -> Bcast {
    let n_in: usize = inp.iter().product();
    if out == inp {
        return Bcast::Same;
    }
    if n_in == 1 {
        return Bcast::Scalar;
    }
    // [.., k] broadcast over leading dims with leading unit extents
    if let Some(&last) = inp.last() {
        if out.last() == Some(&last) && n_in == last {
            return Bcast::Row(last);
        }
    }
    Bcast::General(broadcast_offsets(out, inp))
}

#[inline]
pub(crate) fn bcast_index(b: &Bcast, i: usize) -> usize {
    match b {
        Bcast::Same => i,
        Bcast::Scalar => 0,
        Bcast::Row(w) => i % w,
        Bcast::General(o) => o[i],
    }
}

/// Sums a gradient of the broadcast output shape back onto the operand shape.
pub(crate) fn reduce_grad(grad: &[f64], b: &Bcast, n_in: usize) -> Vec<f64> {
    match b {
        Bcast::Same => grad.to_vec(),
        Bcast::Scalar => vec![grad.iter().sum()],
        Bcast::Row(w) => {
            let mut out = vec![0.0; *w];
            for chunk in grad.chunks_exact(*w) {
                for (o, g) in out.iter_mut().zip(chunk) {
                    *o += g;
                }
            }
            out
        }
        Bcast::General(off) => {
            let mut out = vec![0.0; n_in];
            for (g, &o) in grad.iter().zip(off) {
                out[o] += g;
            }
            out
        }
    }
}

/// `c[m,n] = a[m,k] · b[k,n]`
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `c[m,n] = a[m,k] · b[n,k]ᵀ`
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = dot(arow, brow);
        }
    }
    c
}

/// `c[m,n] = a[k,m]ᵀ · b[k,n]`
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += api * bj;
            }
        }
    }
    c
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four partial sums keep the loop vectorizable with a fixed order
    let mut s = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        s[0] += a[i] * b[i];
        s[1] += a[i + 1] * b[i + 1];
        s[2] += a[i + 2] * b[i + 2];
        s[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// Splits `shape` around `axis` into (outer, extent, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Geometry of a 3×3-style 2-D convolution on a single `[C,H,W]` image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 3 || w.len() != 4 || w[1] != x[0] || w[2] != w[3] {
            return Err(Error::Shape(format!(
                "conv2d: input {x:?} incompatible with kernel {w:?}"
            )));
        }
        let k = w[2];
        if x[1] + 2 * pad < k || x[2] + 2 * pad < k || stride == 0 {
            return Err(Error::Shape(format!("conv2d: input {x:?} too small")));
        }
        Ok(Self {
            c_in: x[0],
            h: x[1],
            w: x[2],
            c_out: w[0],
            k,
            stride,
            pad,
            h_out: (x[1] + 2 * pad - k) / stride + 1,
            w_out: (x[2] + 2 * pad - k) / stride + 1,
        })
    }

    /// im2col matrix of shape `[c_in*k*k, h_out*w_out]`.
    pub fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (kk, hw) = (self.k * self.k, self.h_out * self.w_out);
        let mut cols = vec![0.0; self.c_in * kk * hw];
        for c in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * kk + ky * self.k + kx) * hw;
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.w_out {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            cols[row + oy * self.w_out + ox] =
                                x[(c * self.h + iy as usize) * self.w + ix as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col).
    pub fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let (kk, hw) = (self.k * self.k, self.h_out * self.w_out);
        let mut x = vec![0.0; self.c_in * self.h * self.w];
        for c in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * kk + ky * self.k + kx) * hw;
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.w_out {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            x[(c * self.h + iy as usize) * self.w + ix as usize] +=
                                cols[row + oy * self.w_out + ox];
                        }
                    }
                }
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape("add", &[4, 3], &[3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shape("add", &[4, 1], &[1, 5]).unwrap(), vec![4, 5]);
        assert_eq!(broadcast_shape("add", &[], &[2, 2]).unwrap(), vec![2, 2]);
        let err = broadcast_shape("add", &[4, 3], &[4]).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[4, 3]") && err.contains("[4]"));
    }

    #[test]
    fn offsets_match_manual_indexing() {
        let offs = broadcast_offsets(&[2, 3], &[2, 1]);
        assert_eq!(offs, vec![0, 0, 0, 1, 1, 1]);
        let offs = broadcast_offsets(&[2, 3], &[3]);
        assert_eq!(offs, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect(); // 3x4
        let c = matmul_nn(&a, &b, 2, 3, 4);
        // bᵀ as 4x3
        let mut bt = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        let c2 = matmul_nt(&a, &bt, 2, 3, 4);
        let mut at = vec![0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                at[j * 2 + i] = a[i * 3 + j];
            }
        }
        let c3 = matmul_tn(&at, &b, 3, 2, 4);
        for i in 0..8 {
            assert!((c[i] - c2[i]).abs() < 1e-14);
            assert!((c[i] - c3[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(&[2, 5, 5], &[3, 2, 3, 3], 2, 1).unwrap();
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).cos()).collect();
        let cols = g.im2col(&x);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.11).sin()).collect();
        let lhs = dot(&cols, &y);
        let rhs = dot(&x, &g.col2im(&y));
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!((g.h_out, g.w_out), (3, 3));
    }
}
