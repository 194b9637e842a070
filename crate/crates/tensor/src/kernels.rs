//! Matrix and convolution kernels.
//!
//! All kernels accumulate each output element in a fixed order, so results
//! are bit-identical regardless of thread count. Parallelism only ever
//! splits disjoint output rows across threads, and callers decide whether a
//! kernel may go parallel (nested data parallelism is wasteful inside
//! per-sample loops).
//!
//! Rows are processed four at a time so each pass over the right-hand
//! operand feeds four accumulator rows; that keeps the inner loops
//! vectorizable while cutting memory traffic.

use crate::element::Element;
use rayon::prelude::*;

/// Below this many multiply-adds a kernel ignores the parallel flag.
const PAR_THRESHOLD: usize = 1 << 18;

#[inline]
fn axpy<T: Element>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// y[0..4] += alpha[0..4] ⊗ x, reading x once.
#[inline]
fn axpy4<T: Element>(alpha: [T; 4], x: &[T], y: &mut [&mut [T]; 4]) {
    let n = x.len();
    for i in 0..n {
        let xv = x[i];
        y[0][i] += alpha[0] * xv;
        y[1][i] += alpha[1] * xv;
        y[2][i] += alpha[2] * xv;
        y[3][i] += alpha[3] * xv;
    }
}

/// Dot product with eight independent accumulators; a fixed summation order
/// chosen once, so it both vectorizes and stays deterministic.
#[inline]
pub fn dot<T: Element>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::ZERO; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let xr = xc.remainder();
    let yr = yc.remainder();
    for (xs, ys) in xc.zip(yc) {
        for i in 0..8 {
            acc[i] += xs[i] * ys[i];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (xi, yi) in xr.iter().zip(yr) {
        s += *xi * *yi;
    }
    s
}

/// Four simultaneous dot products against a shared right-hand side.
#[inline]
fn dot4<T: Element>(a: [&[T]; 4], b: &[T]) -> [T; 4] {
    let n = b.len();
    let mut acc = [[T::ZERO; 4]; 2];
    let mut i = 0;
    while i + 2 <= n {
        for lane in 0..2 {
            let bv = b[i + lane];
            acc[lane][0] += a[0][i + lane] * bv;
            acc[lane][1] += a[1][i + lane] * bv;
            acc[lane][2] += a[2][i + lane] * bv;
            acc[lane][3] += a[3][i + lane] * bv;
        }
        i += 2;
    }
    let mut out = [
        acc[0][0] + acc[1][0],
        acc[0][1] + acc[1][1],
        acc[0][2] + acc[1][2],
        acc[0][3] + acc[1][3],
    ];
    while i < n {
        let bv = b[i];
        for r in 0..4 {
            out[r] += a[r][i] * bv;
        }
        i += 1;
    }
    out
}

fn split4<T>(chunk: &mut [T], n: usize) -> [&mut [T]; 4] {
    let (r0, rest) = chunk.split_at_mut(n);
    let (r1, rest) = rest.split_at_mut(n);
    let (r2, r3) = rest.split_at_mut(n);
    [r0, r1, r2, r3]
}

/// out = a · b, a: m×k, b: k×n, out: m×n (overwritten).
pub fn matmul_nn<T: Element>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    parallel: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let quad = |rows: &mut [T], i0: usize| {
        rows.fill(T::ZERO);
        let mut rows = split4(rows, n);
        for kk in 0..k {
            let alpha = [
                a[i0 * k + kk],
                a[(i0 + 1) * k + kk],
                a[(i0 + 2) * k + kk],
                a[(i0 + 3) * k + kk],
            ];
            axpy4(alpha, &b[kk * n..(kk + 1) * n], &mut rows);
        }
    };
    let single = |row: &mut [T], i: usize| {
        row.fill(T::ZERO);
        for kk in 0..k {
            axpy(a[i * k + kk], &b[kk * n..(kk + 1) * n], row);
        }
    };
    let quads = m / 4;
    let (quad_part, tail) = out.split_at_mut(quads * 4 * n);
    if parallel && m * n * k >= PAR_THRESHOLD && quads > 1 {
        quad_part
            .par_chunks_mut(4 * n)
            .enumerate()
            .for_each(|(q, rows)| quad(rows, q * 4));
    } else {
        for (q, rows) in quad_part.chunks_mut(4 * n).enumerate() {
            quad(rows, q * 4);
        }
    }
    for (j, row) in tail.chunks_mut(n).enumerate() {
        single(row, quads * 4 + j);
    }
}

/// out += a · bᵀ, a: m×k, b: n×k, out: m×n.
pub fn matmul_nt_acc<T: Element>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    parallel: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let quad = |rows: &mut [T], i0: usize| {
        let arows = [
            &a[i0 * k..(i0 + 1) * k],
            &a[(i0 + 1) * k..(i0 + 2) * k],
            &a[(i0 + 2) * k..(i0 + 3) * k],
            &a[(i0 + 3) * k..(i0 + 4) * k],
        ];
        let rows = split4(rows, n);
        for j in 0..n {
            let d = dot4(arows, &b[j * k..(j + 1) * k]);
            rows[0][j] += d[0];
            rows[1][j] += d[1];
            rows[2][j] += d[2];
            rows[3][j] += d[3];
        }
    };
    let single = |row: &mut [T], i: usize| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            *o += dot(arow, &b[j * k..(j + 1) * k]);
        }
    };
    let quads = m / 4;
    let (quad_part, tail) = out.split_at_mut(quads * 4 * n);
    if parallel && m * n * k >= PAR_THRESHOLD && quads > 1 {
        quad_part
            .par_chunks_mut(4 * n)
            .enumerate()
            .for_each(|(q, rows)| quad(rows, q * 4));
    } else {
        for (q, rows) in quad_part.chunks_mut(4 * n).enumerate() {
            quad(rows, q * 4);
        }
    }
    for (j, row) in tail.chunks_mut(n).enumerate() {
        single(row, quads * 4 + j);
    }
}

/// out += aᵀ · b, a: k×m, b: k×n, out: m×n.
pub fn matmul_tn_acc<T: Element>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    parallel: bool,
) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let quad = |rows: &mut [T], i0: usize| {
        let mut rows = split4(rows, n);
        for kk in 0..k {
            let alpha = [
                a[kk * m + i0],
                a[kk * m + i0 + 1],
                a[kk * m + i0 + 2],
                a[kk * m + i0 + 3],
            ];
            axpy4(alpha, &b[kk * n..(kk + 1) * n], &mut rows);
        }
    };
    let single = |row: &mut [T], i: usize| {
        for kk in 0..k {
            axpy(a[kk * m + i], &b[kk * n..(kk + 1) * n], row);
        }
    };
    let quads = m / 4;
    let (quad_part, tail) = out.split_at_mut(quads * 4 * n);
    if parallel && m * n * k >= PAR_THRESHOLD && quads > 1 {
        quad_part
            .par_chunks_mut(4 * n)
            .enumerate()
            .for_each(|(q, rows)| quad(rows, q * 4));
    } else {
        for (q, rows) in quad_part.chunks_mut(4 * n).enumerate() {
            quad(rows, q * 4);
        }
    }
    for (j, row) in tail.chunks_mut(n).enumerate() {
        single(row, quads * 4 + j);
    }
}

/// Geometry of one conv2d application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn patch_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    pub fn out_positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Expand one sample (c_in × h × w) into a patch matrix of
/// patch_rows × (oh·ow), zero-filling padding.
pub fn im2col<T: Element>(x: &[T], d: &ConvDims, out: &mut [T]) {
    debug_assert_eq!(x.len(), d.c_in * d.h * d.w);
    debug_assert_eq!(out.len(), d.patch_rows() * d.out_positions());
    let ow = d.ow;
    let mut row = 0;
    for c in 0..d.c_in {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let dst = &mut out[row * d.out_positions()..(row + 1) * d.out_positions()];
                for oi in 0..d.oh {
                    let ih = (oi * d.stride + ki) as isize - d.pad as isize;
                    let dst_row = &mut dst[oi * ow..(oi + 1) * ow];
                    if ih < 0 || ih >= d.h as isize {
                        dst_row.fill(T::ZERO);
                        continue;
                    }
                    let src_row = &plane[ih as usize * d.w..(ih as usize + 1) * d.w];
                    for (oj, dv) in dst_row.iter_mut().enumerate() {
                        let iw = (oj * d.stride + kj) as isize - d.pad as isize;
                        *dv = if iw < 0 || iw >= d.w as isize {
                            T::ZERO
                        } else {
                            src_row[iw as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a patch-matrix gradient back onto one sample's input gradient.
pub fn col2im_acc<T: Element>(cols: &[T], d: &ConvDims, dx: &mut [T]) {
    debug_assert_eq!(cols.len(), d.patch_rows() * d.out_positions());
    debug_assert_eq!(dx.len(), d.c_in * d.h * d.w);
    let mut row = 0;
    for c in 0..d.c_in {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let src = &cols[row * d.out_positions()..(row + 1) * d.out_positions()];
                for oi in 0..d.oh {
                    let ih = (oi * d.stride + ki) as isize - d.pad as isize;
                    if ih < 0 || ih >= d.h as isize {
                        continue;
                    }
                    let plane_row = ih as usize * d.w;
                    for oj in 0..d.ow {
                        let iw = (oj * d.stride + kj) as isize - d.pad as isize;
                        if iw < 0 || iw >= d.w as isize {
                            continue;
                        }
                        plane[plane_row + iw as usize] += src[oi * d.ow + oj];
                    }
                }
                row += 1;
            }
        }
    }
}
