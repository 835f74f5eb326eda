//! Tensor kernels for the toy network. Feature maps are `[channels x h x w]`.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView4, Axis};

/// 3x3 convolution with zero padding, via im2col.
pub fn conv3x3(x: &Array3<f64>, w: ArrayView4<'_, f64>) -> Array3<f64> {
    let (c_in, h, wd) = x.dim();
    let c_out = w.shape()[0];
    let mut cols = Array2::<f64>::zeros((c_in * 9, h * wd));
    for c in 0..c_in {
        for dy in 0..3 {
            for dx in 0..3 {
                let row = c * 9 + dy * 3 + dx;
                let mut dst = cols.row_mut(row);
                for i in 0..h {
                    let si = i as isize + dy as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..wd {
                        let sj = j as isize + dx as isize - 1;
                        if sj >= 0 && sj < wd as isize {
                            dst[i * wd + j] = x[[c, si as usize, sj as usize]];
                        }
                    }
                }
            }
        }
    }
    let wm = w.to_shape((c_out, c_in * 9)).expect("contiguous kernel");
    wm.dot(&cols)
        .into_shape_with_order((c_out, h, wd))
        .expect("conv output shape")
}

/// Per-pixel linear map `[out x in]`.
pub fn pointwise(x: &Array3<f64>, m: ArrayView2<'_, f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let flat = x.to_shape((c, h * w)).expect("feature map");
    m.dot(&flat)
        .into_shape_with_order((m.nrows(), h, w))
        .expect("pointwise output shape")
}

pub fn avg_pool2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(ch, i, j)| {
        0.25 * (x[[ch, 2 * i, 2 * j]] + x[[ch, 2 * i + 1, 2 * j]] + x[[ch, 2 * i, 2 * j + 1]] + x[[ch, 2 * i + 1, 2 * j + 1]])
    })
}

pub fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ch, i, j)| x[[ch, i / 2, j / 2]])
}

pub fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

/// `x * (1 + scale_c) + shift_c`, with `film = [scale; shift]`.
pub fn film(x: &mut Array3<f64>, film: &Array1<f64>) {
    let c = x.len_of(Axis(0));
    for (ch, mut plane) in x.axis_iter_mut(Axis(0)).enumerate() {
        let (scale, shift) = (film[ch], film[c + ch]);
        plane.mapv_inplace(|v| v * (1.0 + scale) + shift);
    }
}

/// Sinusoidal timestep features of even length `dim`.
pub fn timestep_embedding(t: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t as f64 * freq).sin();
        out[half + i] = (t as f64 * freq).cos();
    }
    out
}

/// `[c x h x w]` to `[h*w x c]`.
pub fn to_tokens(x: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    x.to_shape((c, h * w)).expect("feature map").t().to_owned()
}

pub fn from_tokens(tokens: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
    let c = tokens.ncols();
    tokens
        .t()
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, h, w))
        .expect("token count matches map size")
}

/// Columns `[h*d, (h+1)*d)` of a projection.
pub fn head_cols(m: &Array2<f64>, head: usize, d: usize) -> ArrayView2<'_, f64> {
    m.slice(s![.., head * d..(head + 1) * d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn identity_kernel_is_identity() {
        let x = Array3::from_shape_fn((2, 3, 4), |(c, i, j)| (c * 12 + i * 4 + j) as f64);
        let mut w = Array4::zeros((2, 2, 3, 3));
        w[[0, 0, 1, 1]] = 1.0;
        w[[1, 1, 1, 1]] = 1.0;
        assert_eq!(conv3x3(&x, w.view()), x);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = Array3::from_shape_fn((1, 3, 3), |(_, i, j)| (i * 3 + j) as f64);
        let w = Array4::from_elem((1, 1, 3, 3), 1.0);
        let y = conv3x3(&x, w.view());
        // centre sees everything, corner (0,0) sees the 2x2 block {0,1,3,4}
        assert_eq!(y[[0, 1, 1]], 36.0);
        assert_eq!(y[[0, 0, 0]], 8.0);
    }

    #[test]
    fn pool_and_upsample() {
        let x = Array3::from_shape_fn((1, 2, 2), |(_, i, j)| (i * 2 + j) as f64);
        assert_eq!(avg_pool2(&x)[[0, 0, 0]], 1.5);
        let up = upsample2(&avg_pool2(&x));
        assert!(up.iter().all(|&v| v == 1.5));
    }

    #[test]
    fn tokens_round_trip() {
        let x = Array3::from_shape_fn((3, 2, 5), |(c, i, j)| (c * 100 + i * 10 + j) as f64);
        let t = to_tokens(&x);
        assert_eq!(t.dim(), (10, 3));
        assert_eq!(t[[7, 2]], 212.0);
        assert_eq!(from_tokens(&t, 2, 5), x);
    }
}
