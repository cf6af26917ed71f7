//! Raw forward/backward kernels over flat `[C, H, W]` buffers.
//!
//! Convolution is cross-correlation (no kernel flip), stride 1, lowered to a
//! GEMM through im2col.

/// Geometry of one stride-1 convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad_h == 0 && self.pad_w == 0
    }

    /// Output columns `ox` whose input column `ox + kx - pad_w` lies inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad_w.saturating_sub(kx);
        let hi = (self.w + self.pad_w).saturating_sub(kx).min(self.ow);
        (lo, hi.max(lo))
    }
}

/// `c[m x n] = a[m x k] * b[k x n] + beta * c`, with arbitrary strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
        assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    }
    // SAFETY: the asserts above keep every strided access inside the slices, and
    // `c` is a distinct mutable borrow of at least m*n elements laid out row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds input patches into a `[cin*kh*kw, oh*ow]` matrix.
fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ohw = g.oh * g.ow;
    let mut col = vec![0.0; g.patch_len() * ohw];
    for ci in 0..g.cin {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.oh {
                    let iy = oy + ky;
                    if iy < g.pad_h || iy - g.pad_h >= g.h {
                        continue;
                    }
                    let src_row = &plane[(iy - g.pad_h) * g.w..(iy - g.pad_h + 1) * g.w];
                    let d = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        d[ox] = src_row[ox + kx - g.pad_w];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the input.
fn col2im(col: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ohw = g.oh * g.ow;
    let mut out = vec![0.0; g.cin * g.h * g.w];
    for ci in 0..g.cin {
        let plane = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * ohw..(row + 1) * ohw];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.oh {
                    let iy = oy + ky;
                    if iy < g.pad_h || iy - g.pad_h >= g.h {
                        continue;
                    }
                    let dst_row = &mut plane[(iy - g.pad_h) * g.w..(iy - g.pad_h + 1) * g.w];
                    let s = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        dst_row[ox + kx - g.pad_w] += s[ox];
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_forward(input: &[f64], kernel: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ohw = g.oh * g.ow;
    let mut out = Vec::with_capacity(g.cout * ohw);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, ohw));
    }
    let owned;
    let col: &[f64] = if g.is_pointwise() {
        input
    } else {
        owned = im2col(input, g);
        &owned
    };
    let k = g.patch_len();
    gemm(g.cout, k, ohw, kernel, (k, 1), col, (ohw, 1), &mut out, 1.0);
    out
}

/// Gradients of a convolution; each output is computed only when requested.
pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
    want: (bool, bool, bool),
) -> ConvGrads {
    let ohw = g.oh * g.ow;
    let k = g.patch_len();
    let (want_input, want_kernel, want_bias) = want;

    let kernel_grad = want_kernel.then(|| {
        let owned;
        let col: &[f64] = if g.is_pointwise() {
            input
        } else {
            owned = im2col(input, g);
            &owned
        };
        let mut dk = vec![0.0; g.cout * k];
        // dK[cout, k] = dOut[cout, ohw] * col^T[ohw, k]
        gemm(g.cout, ohw, k, grad_out, (ohw, 1), col, (1, ohw), &mut dk, 0.0);
        dk
    });

    let bias_grad = want_bias.then(|| {
        grad_out
            .chunks_exact(ohw)
            .map(|plane| plane.iter().sum())
            .collect()
    });

    let input_grad = want_input.then(|| {
        let mut dcol = vec![0.0; k * ohw];
        // dCol[k, ohw] = K^T[k, cout] * dOut[cout, ohw]
        gemm(k, g.cout, ohw, kernel, (1, k), grad_out, (ohw, 1), &mut dcol, 0.0);
        if g.is_pointwise() {
            dcol
        } else {
            col2im(&dcol, g)
        }
    });

    ConvGrads {
        input: input_grad,
        kernel: kernel_grad,
        bias: bias_grad,
    }
}

/// 2x2 max pooling. Returns the pooled values and, per output, the flat input
/// index that won (lowest flat index on ties).
pub(crate) fn maxpool2_forward(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool2_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut gin = vec![0.0; input_len];
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        gin[idx] += g;
    }
    gin
}

pub(crate) fn upsample2_forward(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let ow = 2 * w;
    let mut out = vec![0.0; c * 4 * h * w];
    for ch in 0..c {
        for y in 0..h {
            let src = &input[(ch * h + y) * w..(ch * h + y + 1) * w];
            for dy in 0..2 {
                let row = &mut out[(ch * 2 * h + 2 * y + dy) * ow..(ch * 2 * h + 2 * y + dy + 1) * ow];
                for (x, &v) in src.iter().enumerate() {
                    row[2 * x] = v;
                    row[2 * x + 1] = v;
                }
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(grad_out: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let ow = 2 * w;
    let mut gin = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let dst = &mut gin[(ch * h + y) * w..(ch * h + y + 1) * w];
            for dy in 0..2 {
                let row = &grad_out[(ch * 2 * h + 2 * y + dy) * ow..(ch * 2 * h + 2 * y + dy + 1) * ow];
                for (x, d) in dst.iter_mut().enumerate() {
                    *d += row[2 * x] + row[2 * x + 1];
                }
            }
        }
    }
    gin
}

/// Mean over every `win x win` window (stride 1, no padding), per channel.
pub(crate) fn box_mean_forward(input: &[f64], c: usize, h: usize, w: usize, win: usize) -> Vec<f64> {
    let (oh, ow) = (h - win + 1, w - win + 1);
    let norm = 1.0 / (win * win) as f64;
    let mut rows = vec![0.0; h * ow];
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for ox in 0..ow {
                rows[y * ow + ox] = src[ox..ox + win].iter().sum();
            }
        }
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for dy in 0..win {
                    s += rows[(oy + dy) * ow + ox];
                }
                dst[oy * ow + ox] = s * norm;
            }
        }
    }
    out
}

pub(crate) fn box_mean_backward(grad_out: &[f64], c: usize, h: usize, w: usize, win: usize) -> Vec<f64> {
    let (oh, ow) = (h - win + 1, w - win + 1);
    let norm = 1.0 / (win * win) as f64;
    let mut rows = vec![0.0; h * ow];
    let mut gin = vec![0.0; c * h * w];
    for ch in 0..c {
        let g = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        rows.iter_mut().for_each(|r| *r = 0.0);
        for oy in 0..oh {
            for dy in 0..win {
                let dst = &mut rows[(oy + dy) * ow..(oy + dy + 1) * ow];
                for (d, &v) in dst.iter_mut().zip(&g[oy * ow..(oy + 1) * ow]) {
                    *d += v * norm;
                }
            }
        }
        let plane = &mut gin[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let dst = &mut plane[y * w..(y + 1) * w];
            for ox in 0..ow {
                let v = rows[y * ow + ox];
                for d in &mut dst[ox..ox + win] {
                    *d += v;
                }
            }
        }
    }
    gin
}
