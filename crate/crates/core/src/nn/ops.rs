//! Stateless tensor kernels on N×C×H×W `f64` arrays, with their adjoints.

use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};

/// How a convolution reads pixels outside the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Reflect,
}

/// Upper bound on im2col buffer elements per chunk.
const COLS_BUDGET: usize = 1 << 20;

fn source_index(i: isize, n: usize, padding: Padding) -> Option<usize> {
    if (0..n as isize).contains(&i) {
        return Some(i as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n as isize - 1);
            let m = i.rem_euclid(period);
            Some((if m < n as isize { m } else { period - m }) as usize)
        }
    }
}

fn rows_per_chunk(cin: usize, k: usize, h: usize, w: usize) -> usize {
    (COLS_BUDGET / (cin * k * k * w).max(1)).clamp(1, h)
}

/// Fills `cols` (Cin·K·K × rows·W) for output rows `y0..y0+rows` of one sample.
fn im2col(x: ArrayView4<f64>, n: usize, k: usize, padding: Padding, y0: usize, rows: usize, cols: &mut Array2<f64>) {
    let (_, cin, h, w) = x.dim();
    let pad = (k / 2) as isize;
    let plane = rows * w;
    let cols = cols.as_slice_mut().expect("cols is contiguous");
    for ci in 0..cin {
        let src = x.slice(s![n, ci, .., ..]);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for r in 0..rows {
                    let sy = source_index((y0 + r) as isize + ky as isize - pad, h, padding);
                    let out = &mut dst[r * w..(r + 1) * w];
                    let Some(sy) = sy else {
                        out.fill(0.0);
                        continue;
                    };
                    let line = src.row(sy);
                    for (xo, o) in out.iter_mut().enumerate() {
                        *o = match source_index(xo as isize + kx as isize - pad, w, padding) {
                            Some(sx) => line[sx],
                            None => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` into `dx`.
fn col2im(cols: ArrayView2<f64>, n: usize, k: usize, padding: Padding, y0: usize, rows: usize, dx: &mut Array4<f64>) {
    let (_, cin, h, w) = dx.dim();
    let pad = (k / 2) as isize;
    let plane = rows * w;
    let cols = cols.as_slice().expect("cols is contiguous");
    for ci in 0..cin {
        let mut dst = dx.slice_mut(s![n, ci, .., ..]);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for r in 0..rows {
                    let Some(sy) = source_index((y0 + r) as isize + ky as isize - pad, h, padding) else {
                        continue;
                    };
                    for xo in 0..w {
                        if let Some(sx) = source_index(xo as isize + kx as isize - pad, w, padding) {
                            dst[[sy, sx]] += src[r * w + xo];
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 "same" convolution with an odd K×K kernel.
///
/// `weight` is Cout×Cin×K×K, `bias` has Cout entries.
pub fn conv2d(x: ArrayView4<f64>, weight: ArrayView4<f64>, bias: ArrayView1<f64>, padding: Padding) -> Array4<f64> {
    let (n, cin, h, w) = x.dim();
    let (cout, wcin, k, _) = weight.dim();
    assert_eq!(cin, wcin, "conv2d: input has {cin} channels, weight expects {wcin}");
    let wmat = weight.to_shape((cout, cin * k * k)).expect("weight reshape");
    let mut out = Array4::zeros((n, cout, h, w));
    let chunk = rows_per_chunk(cin, k, h, w);
    let mut cols = Array2::zeros((cin * k * k, chunk * w));
    for b in 0..n {
        let mut y0 = 0;
        while y0 < h {
            let rows = chunk.min(h - y0);
            if cols.dim().1 != rows * w {
                cols = Array2::zeros((cin * k * k, rows * w));
            }
            im2col(x, b, k, padding, y0, rows, &mut cols);
            let mut res = wmat.dot(&cols);
            for (mut line, &bv) in res.axis_iter_mut(Axis(0)).zip(bias.iter()) {
                line += bv;
            }
            let res = res.into_shape_with_order((cout, rows, w)).expect("output reshape");
            out.slice_mut(s![b, .., y0..y0 + rows, ..]).assign(&res);
            y0 += rows;
        }
    }
    out
}

/// Gradients of [`conv2d`]: returns `(dx, dweight, dbias)`; `dx` only when asked.
pub fn conv2d_backward(
    x: ArrayView4<f64>,
    weight: ArrayView4<f64>,
    dy: ArrayView4<f64>,
    padding: Padding,
    need_dx: bool,
) -> (Option<Array4<f64>>, Array4<f64>, Array1<f64>) {
    let (n, cin, h, w) = x.dim();
    let (cout, _, k, _) = weight.dim();
    let wmat = weight.to_shape((cout, cin * k * k)).expect("weight reshape");
    let wmat_t = wmat.t();
    let mut dw = Array2::<f64>::zeros((cout, cin * k * k));
    let mut db = Array1::<f64>::zeros(cout);
    let mut dx = need_dx.then(|| Array4::zeros((n, cin, h, w)));
    let chunk = rows_per_chunk(cin, k, h, w);
    let mut cols = Array2::zeros((cin * k * k, chunk * w));
    for b in 0..n {
        let mut y0 = 0;
        while y0 < h {
            let rows = chunk.min(h - y0);
            if cols.dim().1 != rows * w {
                cols = Array2::zeros((cin * k * k, rows * w));
            }
            im2col(x, b, k, padding, y0, rows, &mut cols);
            let dyc = dy.slice(s![b, .., y0..y0 + rows, ..]);
            let dyc = dyc.to_shape((cout, rows * w)).expect("dy reshape");
            dw += &dyc.dot(&cols.t());
            db += &dyc.sum_axis(Axis(1));
            if let Some(dx) = dx.as_mut() {
                let dcols = wmat_t.dot(&dyc);
                col2im(dcols.view(), b, k, padding, y0, rows, dx);
            }
            y0 += rows;
        }
    }
    (dx, dw.into_shape_with_order((cout, cin, k, k)).expect("dw reshape"), db)
}

pub fn relu(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// 2×2 max pooling with stride 2. H and W must be even.
pub fn maxpool2(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    Array4::from_shape_fn((n, c, h / 2, w / 2), |(b, ch, y, xx)| {
        let (y2, x2) = (2 * y, 2 * xx);
        x[[b, ch, y2, x2]]
            .max(x[[b, ch, y2, x2 + 1]])
            .max(x[[b, ch, y2 + 1, x2]])
            .max(x[[b, ch, y2 + 1, x2 + 1]])
    })
}

/// Routes each pooled gradient to the first maximal input of its window.
pub fn maxpool2_backward(x: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
    let mut dx = Array4::zeros(x.dim());
    for ((b, c, y, xx), &g) in dy.indexed_iter() {
        let mut best = (2 * y, 2 * xx);
        for (dy_, dx_) in [(0, 1), (1, 0), (1, 1)] {
            let cand = (2 * y + dy_, 2 * xx + dx_);
            if x[[b, c, cand.0, cand.1]] > x[[b, c, best.0, best.1]] {
                best = cand;
            }
        }
        dx[[b, c, best.0, best.1]] += g;
    }
    dx
}

/// Source taps `(i0, i1, frac)` per output index, half-pixel centres.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of the spatial axes to `oh`×`ow`.
pub fn upsample_bilinear(x: &Array4<f64>, oh: usize, ow: usize) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = Array4::zeros((n, c, oh, ow));
    for b in 0..n {
        for ch in 0..c {
            let src = x.slice(s![b, ch, .., ..]);
            let mut dst = out.slice_mut(s![b, ch, .., ..]);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
                    let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
                    dst[[oy, ox]] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
    }
    out
}

pub fn upsample_bilinear_backward(dy: &Array4<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c, oh, ow) = dy.dim();
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut dx = Array4::zeros((n, c, h, w));
    for b in 0..n {
        for ch in 0..c {
            let g = dy.slice(s![b, ch, .., ..]);
            let mut dst = dx.slice_mut(s![b, ch, .., ..]);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let v = g[[oy, ox]];
                    dst[[y0, x0]] += v * (1.0 - fy) * (1.0 - fx);
                    dst[[y0, x1]] += v * (1.0 - fy) * fx;
                    dst[[y1, x0]] += v * fy * (1.0 - fx);
                    dst[[y1, x1]] += v * fy * fx;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample_nearest2(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(b, ch, y, xx)| x[[b, ch, y / 2, xx / 2]])
}

/// Concatenates along the channel axis.
pub fn concat_channels(a: &Array4<f64>, b: &Array4<f64>) -> Array4<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("concat: spatial shapes agree")
}

/// Splits a channel-concatenated gradient at `at`.
pub fn split_channels(d: &Array4<f64>, at: usize) -> (Array4<f64>, Array4<f64>) {
    (d.slice(s![.., ..at, .., ..]).to_owned(), d.slice(s![.., at.., .., ..]).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use ndarray::Array;
    use rand::Rng;

    fn random4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = stream(seed, Purpose::GradCheck, 0);
        Array::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct definition of a same-padded convolution.
    fn conv_reference(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>, padding: Padding) -> Array4<f64> {
        let (n, cin, h, ww) = x.dim();
        let (cout, _, k, _) = w.dim();
        let p = (k / 2) as isize;
        Array4::from_shape_fn((n, cout, h, ww), |(bi, co, y, xx)| {
            let mut acc = b[co];
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = source_index(y as isize + ky as isize - p, h, padding);
                        let sx = source_index(xx as isize + kx as isize - p, ww, padding);
                        if let (Some(sy), Some(sx)) = (sy, sx) {
                            acc += w[[co, ci, ky, kx]] * x[[bi, ci, sy, sx]];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_definition() {
        for (k, padding) in [(1, Padding::Zero), (3, Padding::Zero), (3, Padding::Reflect), (7, Padding::Zero)] {
            let x = random4((2, 3, 9, 6), 1);
            let w = random4((4, 3, k, k), 2);
            let b = Array1::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
            let got = conv2d(x.view(), w.view(), b.view(), padding);
            let want = conv_reference(&x, &w, &b, padding);
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12), "k={k} {padding:?}");
        }
    }

    #[test]
    fn conv_chunking_is_transparent() {
        // Tall input forces several row chunks.
        let x = random4((1, 64, 40, 48), 3);
        let w = random4((2, 64, 3, 3), 4);
        let b = Array1::zeros(2);
        let got = conv2d(x.view(), w.view(), b.view(), Padding::Zero);
        let want = conv_reference(&x, &w, &b, Padding::Zero);
        assert!(rows_per_chunk(64, 3, 40, 48) < 40);
        assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    /// <dy, J dx> == <J^T dy, dx> for a linear map J.
    #[test]
    fn conv_backward_is_the_adjoint() {
        for padding in [Padding::Zero, Padding::Reflect] {
            let x = random4((2, 3, 7, 5), 5);
            let w = random4((4, 3, 3, 3), 6);
            let dy = random4((2, 4, 7, 5), 7);
            let zero = Array1::zeros(4);
            let (dx, dw, db) = conv2d_backward(x.view(), w.view(), dy.view(), padding, true);
            let dx = dx.unwrap();
            let y = conv2d(x.view(), w.view(), zero.view(), padding);
            let lhs: f64 = (&y * &dy).sum();
            assert!((lhs - (&dx * &x).sum()).abs() < 1e-10);
            assert!((lhs - (&dw * &w).sum()).abs() < 1e-10);
            assert!((db.sum() - dy.sum()).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_backward_is_the_adjoint() {
        let x = random4((1, 2, 3, 5), 8);
        let dy = random4((1, 2, 6, 10), 9);
        let y = upsample_bilinear(&x, 6, 10);
        let dx = upsample_bilinear_backward(&dy, 3, 5);
        assert!(((&y * &dy).sum() - (&dx * &x).sum()).abs() < 1e-12);
    }

    #[test]
    fn bilinear_upsampling_of_constant_is_constant() {
        let x = Array4::from_elem((1, 1, 4, 4), 2.5);
        assert!(upsample_bilinear(&x, 8, 8).iter().all(|&v| v == 2.5));
        let same = random4((1, 1, 4, 4), 10);
        assert_eq!(upsample_bilinear(&same, 4, 4), same);
    }

    #[test]
    fn maxpool_roundtrip() {
        let x = random4((1, 2, 4, 6), 11);
        let y = maxpool2(&x);
        assert_eq!(y.dim(), (1, 2, 2, 3));
        let dx = maxpool2_backward(&x, &Array4::ones(y.dim()));
        assert_eq!(dx.sum(), 12.0);
        for ((b, c, yy, xx), &v) in y.indexed_iter() {
            assert_eq!(dx.slice(s![b, c, 2 * yy..2 * yy + 2, 2 * xx..2 * xx + 2]).sum(), 1.0);
            assert!(dx.slice(s![b, c, 2 * yy..2 * yy + 2, 2 * xx..2 * xx + 2]).indexed_iter().any(|((i, j), &g)| g == 1.0 && x[[b, c, 2 * yy + i, 2 * xx + j]] == v));
        }
    }

    #[test]
    fn reflect_padding_indices() {
        assert_eq!(source_index(-1, 5, Padding::Reflect), Some(1));
        assert_eq!(source_index(5, 5, Padding::Reflect), Some(3));
        assert_eq!(source_index(-1, 5, Padding::Zero), None);
    }

    #[test]
    fn nearest_upsampling_and_concat() {
        let x = random4((1, 2, 2, 3), 12);
        let up = upsample_nearest2(&x);
        assert_eq!(up[[0, 1, 3, 5]], x[[0, 1, 1, 2]]);
        let cat = concat_channels(&x, &x);
        let (a, b) = split_channels(&cat, 2);
        assert_eq!(a, x);
        assert_eq!(b, x);
    }
}
