//! Layer kernels: convolution (im2col + GEMM), max pooling, fully
//! connected, and elementwise activations. All buffers are NHWC
//! row-major `f64` slices; shapes are validated by the caller.

use std::cell::RefCell;
use std::collections::HashMap;

thread_local! {
    // recycled patch-matrix buffers, keyed by exact length; the big
    // im2col/dcols transients otherwise churn megabytes of fresh pages
    // every training step
    static SCRATCH: RefCell<HashMap<usize, Vec<Vec<f64>>>> = RefCell::new(HashMap::new());
}

/// A scratch buffer of exactly `len` elements with unspecified (stale)
/// contents; the caller must overwrite every element before reading.
pub(crate) fn take_scratch(len: usize) -> Vec<f64> {
    SCRATCH
        .with(|p| p.borrow_mut().get_mut(&len).and_then(Vec::pop))
        .unwrap_or_else(|| vec![0.0; len])
}

pub(crate) fn give_scratch(buf: Vec<f64>) {
    SCRATCH.with(|p| {
        let mut pool = p.borrow_mut();
        let slot = pool.entry(buf.len()).or_default();
        if slot.len() < 4 {
            slot.push(buf);
        }
    });
}

/// C[m x n] = A[m x k] * B[k x n], all row-major.
pub(crate) fn mm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C[m x n] = A^T * B where A is stored row-major [k x m].
pub(crate) fn mm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C[m x n] = A * B^T where B is stored row-major [n x k].
pub(crate) fn mm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output extent and leading pad for "same"-style convolution:
/// `out = ceil(in / stride)`, zero padding split evenly (extra at the end).
pub(crate) fn conv_extent(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total_pad = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total_pad / 2)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub c_out: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvDims {
    pub fn new(
        n: usize,
        h: usize,
        w: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
        c_out: usize,
        stride: usize,
    ) -> Self {
        let (oh, pad_top) = conv_extent(h, kh, stride);
        let (ow, pad_left) = conv_extent(w, kw, stride);
        ConvDims {
            n,
            h,
            w,
            c_in,
            kh,
            kw,
            c_out,
            stride,
            oh,
            ow,
            pad_top,
            pad_left,
        }
    }

    fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn cols(&self) -> usize {
        self.kh * self.kw * self.c_in
    }
}

/// Unfolds the input into a [rows x cols] patch matrix, one row per
/// output position, zero-filled outside the image. Every row position
/// is written exactly once (zeros only where the kernel hangs off the
/// image), so the buffer needs no prior clearing.
fn im2col(d: &ConvDims, input: &[f64], cols: &mut [f64]) {
    let (h, w, c) = (d.h, d.w, d.c_in);
    let k = d.cols();
    let mut row = 0usize;
    for img in 0..d.n {
        let base = img * h * w * c;
        for oy in 0..d.oh {
            let iy0 = (oy * d.stride) as isize - d.pad_top as isize;
            for ox in 0..d.ow {
                let ix0 = (ox * d.stride) as isize - d.pad_left as isize;
                let out_row = &mut cols[row * k..(row + 1) * k];
                for ky in 0..d.kh {
                    let iy = iy0 + ky as isize;
                    let krow = &mut out_row[ky * d.kw * c..(ky + 1) * d.kw * c];
                    if iy < 0 || iy >= h as isize {
                        krow.fill(0.0);
                        continue;
                    }
                    for kx in 0..d.kw {
                        let ix = ix0 + kx as isize;
                        let dst = &mut krow[kx * c..(kx + 1) * c];
                        if ix < 0 || ix >= w as isize {
                            dst.fill(0.0);
                        } else {
                            let src = base + ((iy as usize * w) + ix as usize) * c;
                            dst.copy_from_slice(&input[src..src + c]);
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds a patch-matrix gradient back onto the input (scatter-add).
fn col2im(d: &ConvDims, dcols: &[f64], dinput: &mut [f64]) {
    let (h, w, c) = (d.h, d.w, d.c_in);
    let k = d.cols();
    let mut row = 0usize;
    for img in 0..d.n {
        let base = img * h * w * c;
        for oy in 0..d.oh {
            let iy0 = (oy * d.stride) as isize - d.pad_top as isize;
            for ox in 0..d.ow {
                let ix0 = (ox * d.stride) as isize - d.pad_left as isize;
                let src_row = &dcols[row * k..(row + 1) * k];
                for ky in 0..d.kh {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..d.kw {
                        let ix = ix0 + kx as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = base + ((iy as usize * w) + ix as usize) * c;
                        let src = (ky * d.kw + kx) * c;
                        for ch in 0..c {
                            dinput[dst + ch] += src_row[src + ch];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Convolution forward: weight is [kh, kw, c_in, c_out] row-major,
/// output is NHWC [n, oh, ow, c_out].
pub(crate) fn conv_forward(d: &ConvDims, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let rows = d.rows();
    let k = d.cols();
    let mut cols = take_scratch(rows * k);
    im2col(d, input, &mut cols);
    let mut out = vec![0.0; rows * d.c_out];
    mm_nn(rows, k, d.c_out, &cols, weight, &mut out);
    give_scratch(cols);
    for r in 0..rows {
        for (o, b) in out[r * d.c_out..(r + 1) * d.c_out].iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

/// Convolution backward: returns (dinput, dweight, dbias). Pass
/// `need_dinput = false` at the first layer, where the input gradient
/// has no consumer.
pub(crate) fn conv_backward(
    d: &ConvDims,
    input: &[f64],
    weight: &[f64],
    dout: &[f64],
    need_dinput: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = d.rows();
    let k = d.cols();
    let mut cols = take_scratch(rows * k);
    im2col(d, input, &mut cols);

    let mut dweight = vec![0.0; k * d.c_out];
    mm_tn(k, rows, d.c_out, &cols, dout, &mut dweight);
    give_scratch(cols);

    let mut dbias = vec![0.0; d.c_out];
    for r in 0..rows {
        for (db, g) in dbias.iter_mut().zip(&dout[r * d.c_out..(r + 1) * d.c_out]) {
            *db += g;
        }
    }

    let mut dinput = Vec::new();
    if need_dinput {
        let mut dcols = take_scratch(rows * k);
        mm_nt(rows, d.c_out, k, dout, weight, &mut dcols);
        dinput = take_scratch(input.len());
        dinput.fill(0.0); // col2im accumulates
        col2im(d, &dcols, &mut dinput);
        give_scratch(dcols);
    }
    (dinput, dweight, dbias)
}

/// Non-overlapping max pooling; ties resolve to the first window element
/// in scan order. Returns the pooled values and flat argmax indices into
/// the input.
pub(crate) fn maxpool_forward(
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    window: usize,
    input: &[f64],
) -> (Vec<f64>, Vec<u32>) {
    assert!(input.len() < u32::MAX as usize);
    let oh = h / window;
    let ow = w / window;
    let mut out = vec![0.0; n * oh * ow * c];
    let mut arg = vec![0u32; n * oh * ow * c];
    let mut o = 0usize;
    for img in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0u32;
                    for ky in 0..window {
                        let iy = oy * window + ky;
                        for kx in 0..window {
                            let ix = ox * window + kx;
                            let idx = ((img * h + iy) * w + ix) * c + ch;
                            let v = input[idx];
                            if v > best {
                                best = v;
                                best_idx = idx as u32;
                            }
                        }
                    }
                    out[o] = best;
                    arg[o] = best_idx;
                    o += 1;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(dout: &[f64], argmax: &[u32], input_len: usize) -> Vec<f64> {
    let mut dinput = take_scratch(input_len);
    dinput.fill(0.0);
    for (g, &idx) in dout.iter().zip(argmax) {
        dinput[idx as usize] += g;
    }
    dinput
}

/// Fully connected forward: input [n x fan_in], weight [fan_in x width].
pub(crate) fn fc_forward(
    n: usize,
    fan_in: usize,
    width: usize,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; n * width];
    mm_nn(n, fan_in, width, input, weight, &mut out);
    for r in 0..n {
        for (o, b) in out[r * width..(r + 1) * width].iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

pub(crate) fn fc_backward(
    n: usize,
    fan_in: usize,
    width: usize,
    input: &[f64],
    weight: &[f64],
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dweight = vec![0.0; fan_in * width];
    mm_tn(fan_in, n, width, input, dout, &mut dweight);
    let mut dbias = vec![0.0; width];
    for r in 0..n {
        for (db, g) in dbias.iter_mut().zip(&dout[r * width..(r + 1) * width]) {
            *db += g;
        }
    }
    let mut dinput = take_scratch(n * fan_in);
    mm_nt(n, width, fan_in, dout, weight, &mut dinput);
    (dinput, dweight, dbias)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_extent_same_at_stride_one() {
        assert_eq!(conv_extent(64, 3, 1), (64, 1));
        assert_eq!(conv_extent(5, 3, 1), (5, 1));
        assert_eq!(conv_extent(6, 3, 2), (3, 0));
    }

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with weight 1 reproduces the input
        let d = ConvDims::new(1, 3, 3, 1, 1, 1, 1, 1);
        let input: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let out = conv_forward(&d, &input, &[1.0], &[0.0]);
        assert_eq!(out, input);
    }

    #[test]
    fn conv_sums_neighborhood() {
        // all-ones 3x3 kernel on all-ones 3x3 image: center sees 9,
        // edges 6, corners 4 (zero padding)
        let d = ConvDims::new(1, 3, 3, 1, 3, 3, 1, 1);
        let input = vec![1.0; 9];
        let weight = vec![1.0; 9];
        let out = conv_forward(&d, &input, &weight, &[0.0]);
        assert_eq!(out[4], 9.0);
        assert_eq!(out[1], 6.0);
        assert_eq!(out[0], 4.0);
    }

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let input = vec![1.0, 5.0, 3.0, 2.0];
        let (out, arg) = maxpool_forward(1, 2, 2, 1, 2, &input);
        assert_eq!(out, vec![5.0]);
        assert_eq!(arg, vec![1]);
        let dinput = maxpool_backward(&[2.0], &arg, 4);
        assert_eq!(dinput, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_tie_takes_first() {
        let input = vec![7.0, 7.0, 7.0, 7.0];
        let (_, arg) = maxpool_forward(1, 2, 2, 1, 2, &input);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn fc_matches_hand_product() {
        // [1 2] * [[1 0] [0 1]] + [10 20]
        let out = fc_forward(1, 2, 2, &[1.0, 2.0], &[1.0, 0.0, 0.0, 1.0], &[10.0, 20.0]);
        assert_eq!(out, vec![11.0, 22.0]);
    }

    #[test]
    fn gemm_transpose_variants_agree() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = vec![0.0; 4];
        mm_nn(2, 3, 2, &a, &b, &mut c);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);

        // A^T path: store A transposed [3x2] and ask for A^T * B
        let a_t = vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c2 = vec![0.0; 4];
        mm_tn(2, 3, 2, &a_t, &b, &mut c2);
        assert_eq!(c2, c);

        // B^T path: store B transposed [2x3] and ask for A * B^T
        let b_t = vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c3 = vec![0.0; 4];
        mm_nt(2, 3, 2, &a, &b_t, &mut c3);
        assert_eq!(c3, c);
    }
}
