use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::config::AugmentationConfig;
use crate::nn::Resize;

/// Bilinear (half-pixel) resampling of a 2D image.
pub fn resize_image(img: ArrayView2<'_, f32>, to: (usize, usize)) -> Array2<f32> {
    if img.dim() == to {
        return img.to_owned();
    }
    let x = img.to_owned().insert_axis(Axis(0)).insert_axis(Axis(0));
    Resize::new(img.dim(), to)
        .forward(&x)
        .index_axis_move(Axis(0), 0)
        .index_axis_move(Axis(0), 0)
}

/// Nearest-neighbour resampling on the same half-pixel grid, for label maps.
pub fn resize_labels(lab: ArrayView2<'_, u8>, to: (usize, usize)) -> Array2<u8> {
    let (h, w) = lab.dim();
    let src = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
    Array2::from_shape_fn(to, |(i, j)| lab[[src(i, to.0, h), src(j, to.1, w)]])
}

pub fn flip_lr<T: Clone>(a: ArrayView2<'_, T>) -> Array2<T> {
    a.slice(s![.., ..;-1]).to_owned()
}

/// Separable Gaussian blur with a kernel truncated at 3 sigma and replicated edges.
pub fn gaussian_blur(img: ArrayView2<'_, f32>, sigma: f64) -> Array2<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let pass = |a: &Array2<f32>, axis: usize| -> Array2<f32> {
        let (h, w) = a.dim();
        let n = if axis == 0 { h } else { w } as isize;
        Array2::from_shape_fn((h, w), |(i, j)| {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let off = t as isize - radius;
                let idx = if axis == 0 { i as isize + off } else { j as isize + off }.clamp(0, n - 1) as usize;
                let v = if axis == 0 { a[[idx, j]] } else { a[[i, idx]] };
                acc += kv * v as f64;
            }
            acc as f32
        })
    };
    pass(&pass(&img.to_owned(), 0), 1)
}

/// Random rescale, pad-and-crop to the crop size, left-right flip and blur.
/// The geometric steps are applied identically to image and labels; blur only
/// touches the image. Padding uses the image minimum and the background label.
pub fn augment<R: Rng>(
    img: ArrayView2<'_, f32>,
    lab: ArrayView2<'_, u8>,
    aug: &AugmentationConfig,
    rng: &mut R,
) -> (Array2<f32>, Array2<u8>) {
    assert_eq!(img.dim(), lab.dim(), "augment: image and labels differ in shape");
    let [lo, hi] = aug.scale_range;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let (h, w) = img.dim();
    let size = (
        ((h as f64 * scale).round() as usize).max(1),
        ((w as f64 * scale).round() as usize).max(1),
    );
    let img = resize_image(img, size);
    let lab = resize_labels(lab, size);

    let [ch, cw] = aug.crop;
    let (ph, pw) = (size.0.max(ch), size.1.max(cw));
    let fill = crate::volume::min_max(img.iter().copied()).0;
    let mut pimg = Array2::from_elem((ph, pw), fill);
    let mut plab = Array2::<u8>::zeros((ph, pw));
    pimg.slice_mut(s![..size.0, ..size.1]).assign(&img);
    plab.slice_mut(s![..size.0, ..size.1]).assign(&lab);
    let oy = rng.random_range(0..=ph - ch);
    let ox = rng.random_range(0..=pw - cw);
    let mut out_img = pimg.slice(s![oy..oy + ch, ox..ox + cw]).to_owned();
    let mut out_lab = plab.slice(s![oy..oy + ch, ox..ox + cw]).to_owned();

    if rng.random::<f64>() < aug.flip_prob {
        out_img = flip_lr(out_img.view());
        out_lab = flip_lr(out_lab.view());
    }
    if rng.random::<f64>() < aug.blur_prob {
        let [s0, s1] = aug.blur_sigma;
        let sigma = if s1 > s0 { rng.random_range(s0..=s1) } else { s0 };
        out_img = gaussian_blur(out_img.view(), sigma);
    }
    (out_img, out_lab)
}
