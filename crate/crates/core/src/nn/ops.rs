//! Raw kernels. Shapes are checked by the graph layer before these run.

use super::scalar::{matmul, Mat};
use super::Scalar;

/// Unrolls one `[cin, h, w]` image into `[cin * 9, h * w]` columns for a
/// zero-padded 3x3 kernel.
fn im2col<T: Scalar>(img: &[T], cin: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..((ci * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *d = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto an image gradient.
fn col2im<T: Scalar>(cols: &[T], cin: usize, h: usize, w: usize, img: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..((ci * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, &g) in src.iter().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] = dst[sx as usize] + g;
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 cross-correlation, stride 1, zero padding 1.
///
/// `x` is `[n, cin, h, w]`, `weight` is `[cout, cin, 3, 3]`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    [n, cin, h, w]: [usize; 4],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let cout = bias.len();
    let hw = h * w;
    let mut out = vec![T::zero(); n * cout * hw];
    let mut cols = vec![T::zero(); cin * 9 * hw];
    for b in 0..n {
        im2col(&x[b * cin * hw..(b + 1) * cin * hw], cin, h, w, &mut cols);
        let dst = &mut out[b * cout * hw..(b + 1) * cout * hw];
        for (co, row) in dst.chunks_exact_mut(hw).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
        matmul(Mat::new(weight, cout, cin * 9), Mat::new(&cols, cin * 9, hw), dst, true);
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    [n, cin, h, w]: [usize; 4],
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    need_dx: bool,
) -> ConvGrads<T> {
    let hw = h * w;
    let mut dw = vec![T::zero(); cout * cin * 9];
    let mut db = vec![T::zero(); cout];
    let mut dx = need_dx.then(|| vec![T::zero(); n * cin * hw]);
    let mut cols = vec![T::zero(); cin * 9 * hw];
    let mut dcols = vec![T::zero(); cin * 9 * hw];
    for b in 0..n {
        let g = &grad_out[b * cout * hw..(b + 1) * cout * hw];
        for (co, row) in g.chunks_exact(hw).enumerate() {
            db[co] = db[co] + row.iter().copied().sum::<T>();
        }
        im2col(&x[b * cin * hw..(b + 1) * cin * hw], cin, h, w, &mut cols);
        matmul(Mat::new(g, cout, hw), Mat::t(&cols, cin * 9, hw), &mut dw, true);
        if let Some(dx) = dx.as_mut() {
            matmul(Mat::t(weight, cout, cin * 9), Mat::new(g, cout, hw), &mut dcols, false);
            col2im(&dcols, cin, h, w, &mut dx[b * cin * hw..(b + 1) * cin * hw]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// `x [m, din] * weight^T [din, dout] + bias`.
pub fn linear_forward<T: Scalar>(x: &[T], m: usize, din: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let dout = bias.len();
    let mut out = Vec::with_capacity(m * dout);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    matmul(Mat::new(x, m, din), Mat::t(weight, dout, din), &mut out, true);
    out
}

pub(crate) struct LinearGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    m: usize,
    din: usize,
    weight: &[T],
    dout: usize,
    grad_out: &[T],
    need_dx: bool,
) -> LinearGrads<T> {
    let mut db = vec![T::zero(); dout];
    for row in grad_out.chunks_exact(dout) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    let mut dw = vec![T::zero(); dout * din];
    matmul(Mat::t(grad_out, m, dout), Mat::new(x, m, din), &mut dw, false);
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); m * din];
        matmul(Mat::new(grad_out, m, dout), Mat::new(weight, dout, din), &mut dx, false);
        dx
    });
    LinearGrads { dx, dw, db }
}

/// `[n, c*r*r, h, w] -> [n, c, h*r, w*r]` with
/// `out[n, c, h*r + dy, w*r + dx] = in[n, c*r*r + dy*r + dx, h, w]`.
pub fn pixel_shuffle_forward<T: Copy + Default>(x: &[T], [n, cr2, h, w]: [usize; 4], r: usize) -> Vec<T> {
    let c = cr2 / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::default(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let src_c = ch * r * r + dy * r + dx;
                    let src = &x[((b * cr2) + src_c) * h * w..((b * cr2) + src_c + 1) * h * w];
                    let dst = &mut out[(b * c + ch) * oh * ow..(b * c + ch + 1) * oh * ow];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[(y * r + dy) * ow + xx * r + dx] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse index map of [`pixel_shuffle_forward`]; `dims` are the input
/// dims of the shuffle, `[n, c*r*r, h, w]`.
pub fn pixel_unshuffle<T: Copy + Default>(y: &[T], [n, cr2, h, w]: [usize; 4], r: usize) -> Vec<T> {
    let c = cr2 / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::default(); y.len()];
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let dst_c = ch * r * r + dy * r + dx;
                    let src = &y[(b * c + ch) * oh * ow..(b * c + ch + 1) * oh * ow];
                    let dst = &mut out[((b * cr2) + dst_c) * h * w..((b * cr2) + dst_c + 1) * h * w];
                    for yy in 0..h {
                        for xx in 0..w {
                            dst[yy * w + xx] = src[(yy * r + dy) * ow + xx * r + dx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Flat source indices of the replicate-padded 3x3 neighborhood of each
/// position, ordered `c * 9 + ky * 3 + kx` within a row.
pub(crate) fn unfold_gather_forward<T: Scalar>(
    x: &[T],
    [_, c, h, w]: [usize; 4],
    positions: &[[usize; 3]],
) -> Vec<T> {
    let mut out = Vec::with_capacity(positions.len() * 9 * c);
    for &[b, y, xx] in positions {
        let taps = neighborhood(y, xx, h, w);
        let base = b * c * h * w;
        for ch in 0..c {
            let plane = &x[base + ch * h * w..base + (ch + 1) * h * w];
            out.extend(taps.iter().map(|&i| plane[i]));
        }
    }
    out
}

pub(crate) fn unfold_gather_backward<T: Scalar>(
    grad_out: &[T],
    [n, c, h, w]: [usize; 4],
    positions: &[[usize; 3]],
) -> Vec<T> {
    let mut dx = vec![T::zero(); n * c * h * w];
    for (row, &[b, y, xx]) in grad_out.chunks_exact(9 * c).zip(positions) {
        let taps = neighborhood(y, xx, h, w);
        let base = b * c * h * w;
        for ch in 0..c {
            let plane = &mut dx[base + ch * h * w..base + (ch + 1) * h * w];
            for (k, &i) in taps.iter().enumerate() {
                plane[i] = plane[i] + row[ch * 9 + k];
            }
        }
    }
    dx
}

fn neighborhood(y: usize, x: usize, h: usize, w: usize) -> [usize; 9] {
    let mut taps = [0usize; 9];
    for ky in 0..3 {
        let sy = (y + ky).saturating_sub(1).min(h - 1);
        for kx in 0..3 {
            let sx = (x + kx).saturating_sub(1).min(w - 1);
            taps[ky * 3 + kx] = sy * w + sx;
        }
    }
    taps
}
