//! Grid resampling shared by the model (upsampling), the data pipeline
//! (input-size augmentation), and evaluation (prediction-to-native rescaling).
//!
//! Bilinear resampling uses the half-pixel-center convention: destination
//! pixel `d` samples source coordinate `(d + 0.5) * in/out - 0.5`, clamped to
//! the source grid. `bilinear_resize_adjoint` scatters with exactly the same
//! weights, so the pair is a true linear-map/transpose pair, and gradient checks
//! rely on that.

use ndarray::{Array2, Array3};

/// Source interpolation stencil for one destination index:
/// `(lo, hi, frac)` with `value = (1-frac)*src[lo] + frac*src[hi]`.
#[inline]
fn stencil(dst: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = (dst as f64 + 0.5) * scale - 0.5;
    let src = src.clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

pub fn bilinear_resize(input: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (in_h, in_w) = input.dim();
    assert!(in_h > 0 && in_w > 0 && out_h > 0 && out_w > 0);
    if (in_h, in_w) == (out_h, out_w) {
        return input.clone();
    }
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|c| stencil(c, out_w, in_w)).collect();
    let mut out = Array2::zeros((out_h, out_w));
    for r in 0..out_h {
        let (r0, r1, fr) = stencil(r, out_h, in_h);
        for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
            let top = input[[r0, c0]] * (1.0 - fc) + input[[r0, c1]] * fc;
            let bot = input[[r1, c0]] * (1.0 - fc) + input[[r1, c1]] * fc;
            out[[r, c]] = top * (1.0 - fr) + bot * fr;
        }
    }
    out
}

/// Transpose of [`bilinear_resize`]: scatter an `out_h×out_w` cotangent back
/// onto an `in_h×in_w` grid.
pub fn bilinear_resize_adjoint(
    grad_out: &Array2<f64>,
    in_h: usize,
    in_w: usize,
) -> Array2<f64> {
    let (out_h, out_w) = grad_out.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return grad_out.clone();
    }
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|c| stencil(c, out_w, in_w)).collect();
    let mut grad_in = Array2::zeros((in_h, in_w));
    for r in 0..out_h {
        let (r0, r1, fr) = stencil(r, out_h, in_h);
        for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
            let g = grad_out[[r, c]];
            grad_in[[r0, c0]] += g * (1.0 - fr) * (1.0 - fc);
            grad_in[[r0, c1]] += g * (1.0 - fr) * fc;
            grad_in[[r1, c0]] += g * fr * (1.0 - fc);
            grad_in[[r1, c1]] += g * fr * fc;
        }
    }
    grad_in
}

/// Channelwise bilinear resize of a `[C, H, W]` grid.
pub fn bilinear_resize3(input: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (ch, _, _) = input.dim();
    let mut out = Array3::zeros((ch, out_h, out_w));
    for c in 0..ch {
        let plane = bilinear_resize(&input.index_axis(ndarray::Axis(0), c).to_owned(), out_h, out_w);
        out.index_axis_mut(ndarray::Axis(0), c).assign(&plane);
    }
    out
}

/// Channelwise transpose of [`bilinear_resize3`].
pub fn bilinear_resize3_adjoint(grad_out: &Array3<f64>, in_h: usize, in_w: usize) -> Array3<f64> {
    let (ch, _, _) = grad_out.dim();
    let mut out = Array3::zeros((ch, in_h, in_w));
    for c in 0..ch {
        let plane = bilinear_resize_adjoint(
            &grad_out.index_axis(ndarray::Axis(0), c).to_owned(),
            in_h,
            in_w,
        );
        out.index_axis_mut(ndarray::Axis(0), c).assign(&plane);
    }
    out
}

/// Nearest-neighbor resize with the same half-pixel-center convention.
/// Output values are always drawn from the input value set, so label grids
/// survive rescaling without interpolation artifacts.
pub fn nearest_resize<T: Copy>(input: &Array2<T>, out_h: usize, out_w: usize) -> Array2<T> {
    let (in_h, in_w) = input.dim();
    let row_src: Vec<usize> = (0..out_h)
        .map(|r| nearest_index(r, out_h, in_h))
        .collect();
    let col_src: Vec<usize> = (0..out_w)
        .map(|c| nearest_index(c, out_w, in_w))
        .collect();
    Array2::from_shape_fn((out_h, out_w), |(r, c)| input[[row_src[r], col_src[c]]])
}

#[inline]
fn nearest_index(dst: usize, out_len: usize, in_len: usize) -> usize {
    let src = (dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    (src.round().max(0.0) as usize).min(in_len - 1)
}

/// Counterclockwise quarter-turn rotation of a 2D grid.
pub fn rotate90(x: &Array2<f64>, quarter_turns: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    match quarter_turns % 4 {
        0 => x.clone(),
        1 => Array2::from_shape_fn((w, h), |(i, j)| x[[j, w - 1 - i]]),
        2 => Array2::from_shape_fn((h, w), |(i, j)| x[[h - 1 - i, w - 1 - j]]),
        _ => Array2::from_shape_fn((w, h), |(i, j)| x[[h - 1 - j, i]]),
    }
}

/// Channelwise counterclockwise rotation of an image.
pub fn rotate90_image(image: &crate::ImageTensor, quarter_turns: usize) -> crate::ImageTensor {
    let (ch, h, w) = image.data.dim();
    let (oh, ow) = if quarter_turns % 2 == 0 { (h, w) } else { (w, h) };
    let mut out = Array3::zeros((ch, oh, ow));
    for c in 0..ch {
        let plane = rotate90(
            &image.data.index_axis(ndarray::Axis(0), c).to_owned(),
            quarter_turns,
        );
        out.index_axis_mut(ndarray::Axis(0), c).assign(&plane);
    }
    crate::ImageTensor::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_resize_is_exact() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(bilinear_resize(&x, 2, 2), x);
        assert_eq!(nearest_resize(&x, 2, 2), x);
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let x = Array2::from_elem((3, 5), 0.7);
        let y = bilinear_resize(&x, 12, 20);
        for &v in y.iter() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn double_upsample_known_values() {
        // 1D ramp along columns; with half-pixel centers the 2x output of
        // [0, 1] is [0, 0.25, 0.75, 1].
        let x = array![[0.0, 1.0]];
        let y = bilinear_resize(&x, 1, 4);
        let expect = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in y.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn adjoint_matches_forward() {
        // <R x, y> == <x, R^T y> for random x, y across shape combinations.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(ih, iw, oh, ow) in &[(4, 4, 9, 7), (8, 5, 3, 10), (6, 6, 6, 6), (5, 9, 20, 4)] {
            let x = Array2::from_shape_fn((ih, iw), |_| rng.gen::<f64>());
            let y = Array2::from_shape_fn((oh, ow), |_| rng.gen::<f64>());
            let rx = bilinear_resize(&x, oh, ow);
            let rty = bilinear_resize_adjoint(&y, ih, iw);
            let lhs: f64 = (&rx * &y).sum();
            let rhs: f64 = (&x * &rty).sum();
            assert!(
                (lhs - rhs).abs() < 1e-10,
                "adjoint mismatch for {ih}x{iw}->{oh}x{ow}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn nearest_preserves_value_set() {
        let x = array![[0u8, 128, 255], [255, 0, 128]];
        let y = nearest_resize(&x, 7, 11);
        for &v in y.iter() {
            assert!(v == 0 || v == 128 || v == 255);
        }
    }
    #[test]
    fn rotation_quarter_turn_permutes_as_expected() {
        let x = array![[1.0, 2.0], [3.0, 4.0]]; // [[a,b],[c,d]]
        let r = rotate90(&x, 1);
        assert_eq!(r, array![[2.0, 4.0], [1.0, 3.0]]); // [[b,d],[a,c]]
    }

    #[test]
    fn rotation_group_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((5, 7), |_| rng.gen_range(-1.0..1.0));
        assert_eq!(rotate90(&x, 0), x);
        let four = rotate90(&rotate90(&rotate90(&rotate90(&x, 1), 1), 1), 1);
        assert_eq!(four, x);
        assert_eq!(rotate90(&rotate90(&x, 1), 3), x);
        assert_eq!(rotate90(&x, 2), rotate90(&rotate90(&x, 1), 1));
    }
}
