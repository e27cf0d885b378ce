use ndarray::{s, Array1, Array3, Array4, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;

use super::{Mode, Params, Real};

pub fn relu<T: Real>(x: &Array4<T>) -> Array4<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Real>(y: &Array4<T>, dy: &Array4<T>) -> Array4<T> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
    mode: Mode,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// In training mode normalises with batch statistics and updates the
    /// running estimates; in evaluation mode uses the running estimates.
    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> (Array4<T>, BnCache<T>) {
        if mode == Mode::Eval {
            return self.forward_eval(x);
        }
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f64;
        let mut mean = Array1::<T>::zeros(c);
        let mut var = Array1::<T>::zeros(c);
        for ch in 0..c {
            let v = x.slice(s![.., ch, .., ..]);
            let mu = v.iter().map(|a| a.f64()).sum::<f64>() / m;
            let var_b = v.iter().map(|a| (a.f64() - mu).powi(2)).sum::<f64>() / m;
            mean[ch] = T::of(mu);
            var[ch] = T::of(var_b);
            let unbiased = if m > 1.0 { var_b * m / (m - 1.0) } else { var_b };
            let mo = self.momentum;
            self.running_mean[ch] = T::of((1.0 - mo) * self.running_mean[ch].f64() + mo * mu);
            self.running_var[ch] = T::of((1.0 - mo) * self.running_var[ch].f64() + mo * unbiased);
        }
        self.normalize(x, &mean, &var, Mode::Train)
    }

    pub fn forward_eval(&self, x: &Array4<T>) -> (Array4<T>, BnCache<T>) {
        self.normalize(x, &self.running_mean, &self.running_var, Mode::Eval)
    }

    fn normalize(&self, x: &Array4<T>, mean: &Array1<T>, var: &Array1<T>, mode: Mode) -> (Array4<T>, BnCache<T>) {
        let c = x.dim().1;
        let inv_std = var.mapv(|v| T::one() / (v + T::of(self.eps)).sqrt());
        let mut xhat = x.clone();
        for ch in 0..c {
            let (mu, is) = (mean[ch], inv_std[ch]);
            xhat.slice_mut(s![.., ch, .., ..]).mapv_inplace(|v| (v - mu) * is);
        }
        let mut y = xhat.clone();
        for ch in 0..c {
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            y.slice_mut(s![.., ch, .., ..]).mapv_inplace(|v| v * g + b);
        }
        (y, BnCache { xhat, inv_std, mode })
    }

    pub fn backward(&self, cache: &BnCache<T>, dy: &Array4<T>, grad: Option<&mut BatchNorm2d<T>>) -> Array4<T> {
        let (n, c, h, w) = dy.dim();
        let m = T::of((n * h * w) as f64);
        let mut dx = Array4::<T>::zeros(dy.dim());
        let mut dgamma = Array1::<T>::zeros(c);
        let mut dbeta = Array1::<T>::zeros(c);
        for ch in 0..c {
            let dyc = dy.slice(s![.., ch, .., ..]);
            let xh = cache.xhat.slice(s![.., ch, .., ..]);
            let sum_dy: T = dyc.sum();
            let sum_dy_xh: T = (&dyc * &xh).sum();
            dgamma[ch] = sum_dy_xh;
            dbeta[ch] = sum_dy;
            let g = self.gamma[ch];
            let is = cache.inv_std[ch];
            let mut dxc = dx.slice_mut(s![.., ch, .., ..]);
            match cache.mode {
                Mode::Train => {
                    Zip::from(&mut dxc).and(&dyc).and(&xh).for_each(|d, &dyv, &x| {
                        *d = g * is / m * (m * dyv - sum_dy - x * sum_dy_xh);
                    });
                }
                Mode::Eval => {
                    Zip::from(&mut dxc).and(&dyc).for_each(|d, &dyv| *d = g * is * dyv);
                }
            }
        }
        if let Some(gr) = grad {
            gr.gamma += &dgamma;
            gr.beta += &dbeta;
        }
        dx
    }
}

impl<T: Real> Params<T> for BatchNorm2d<T> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        vec![
            ("gamma".into(), self.gamma.view().into_dyn()),
            ("beta".into(), self.beta.view().into_dyn()),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        vec![
            ("gamma".into(), self.gamma.view_mut().into_dyn()),
            ("beta".into(), self.beta.view_mut().into_dyn()),
        ]
    }

    fn buffers(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        vec![
            ("running_mean".into(), self.running_mean.view().into_dyn()),
            ("running_var".into(), self.running_var.view().into_dyn()),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        vec![
            ("running_mean".into(), self.running_mean.view_mut().into_dyn()),
            ("running_var".into(), self.running_var.view_mut().into_dyn()),
        ]
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPool2d;

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_dim: (usize, usize, usize, usize),
    /// Flat `(h, w)` offset of the winner for every output element.
    argmax: Array4<u32>,
}

impl MaxPool2d {
    pub fn forward<T: Real>(&self, x: &Array4<T>) -> (Array4<T>, PoolCache) {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Array4::<T>::zeros((n, c, ho, wo));
        let mut argmax = Array4::<u32>::zeros((n, c, ho, wo));
        for b in 0..n {
            for ch in 0..c {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut best = (2 * i, 2 * j);
                        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                            let (ii, jj) = (2 * i + di, 2 * j + dj);
                            if x[[b, ch, ii, jj]] > x[[b, ch, best.0, best.1]] {
                                best = (ii, jj);
                            }
                        }
                        y[[b, ch, i, j]] = x[[b, ch, best.0, best.1]];
                        argmax[[b, ch, i, j]] = (best.0 * w + best.1) as u32;
                    }
                }
            }
        }
        (y, PoolCache { input_dim: (n, c, h, w), argmax })
    }

    pub fn backward<T: Real>(&self, cache: &PoolCache, dy: &Array4<T>) -> Array4<T> {
        let (_, _, _, w) = cache.input_dim;
        let mut dx = Array4::<T>::zeros(cache.input_dim);
        for ((b, ch, i, j), &idx) in cache.argmax.indexed_iter() {
            let idx = idx as usize;
            dx[[b, ch, idx / w, idx % w]] += dy[[b, ch, i, j]];
        }
        dx
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)` during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    /// Returns the output and the mask (already scaled) for the backward pass.
    pub fn forward<T: Real, R: Rng>(&self, x: &Array4<T>, mode: Mode, rng: &mut R) -> (Array4<T>, Option<Array4<T>>) {
        if mode == Mode::Eval || self.p == 0.0 {
            return (x.clone(), None);
        }
        let keep = T::of(1.0 / (1.0 - self.p));
        let mask = Array4::from_shape_simple_fn(x.dim(), || {
            if rng.random::<f64>() < self.p {
                T::zero()
            } else {
                keep
            }
        });
        (x * &mask, Some(mask))
    }

    pub fn backward<T: Real>(&self, mask: &Option<Array4<T>>, dy: &Array4<T>) -> Array4<T> {
        match mask {
            Some(m) => dy * m,
            None => dy.clone(),
        }
    }
}

pub fn global_avg_pool<T: Real>(x: &Array4<T>) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let inv = T::of(1.0 / (h * w) as f64);
    Array4::from_shape_fn((n, c, 1, 1), |(b, ch, _, _)| x.slice(s![b, ch, .., ..]).sum() * inv)
}

pub fn global_avg_pool_backward<T: Real>(dy: &Array4<T>, h: usize, w: usize) -> Array4<T> {
    let (n, c, _, _) = dy.dim();
    let inv = T::of(1.0 / (h * w) as f64);
    Array4::from_shape_fn((n, c, h, w), |(b, ch, _, _)| dy[[b, ch, 0, 0]] * inv)
}

pub fn concat_channels<T: Real>(parts: &[&Array4<T>]) -> Array4<T> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("parts share batch and spatial dims")
}

pub fn split_channels<T: Real>(x: &Array4<T>, sizes: &[usize]) -> Vec<Array4<T>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let part = x.slice(s![.., start..start + n, .., ..]).to_owned();
            start += n;
            part
        })
        .collect()
}

/// Bilinear resampling with half-pixel centres (`align_corners = false`),
/// separable along height then width, with an exact adjoint for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct Resize {
    pub from: (usize, usize),
    pub to: (usize, usize),
    rows: Vec<(usize, usize, f64)>,
    cols: Vec<(usize, usize, f64)>,
}

fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl Resize {
    pub fn new(from: (usize, usize), to: (usize, usize)) -> Self {
        assert!(from.0 > 0 && from.1 > 0 && to.0 > 0 && to.1 > 0, "resize to or from an empty image");
        Self {
            from,
            to,
            rows: taps(from.0, to.0),
            cols: taps(from.1, to.1),
        }
    }

    pub fn forward<T: Real>(&self, x: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!((h, w), self.from, "resize input size");
        if self.from == self.to {
            return x.clone();
        }
        let (ho, wo) = self.to;
        let mut tmp = Array4::<T>::zeros((n, c, ho, w));
        for (o, &(i0, i1, l)) in self.rows.iter().enumerate() {
            let (a, b) = (T::of(1.0 - l), T::of(l));
            let mut dst = tmp.slice_mut(s![.., .., o, ..]);
            Zip::from(&mut dst)
                .and(&x.slice(s![.., .., i0, ..]))
                .and(&x.slice(s![.., .., i1, ..]))
                .for_each(|d, &p, &q| *d = a * p + b * q);
        }
        let mut y = Array4::<T>::zeros((n, c, ho, wo));
        for (o, &(j0, j1, l)) in self.cols.iter().enumerate() {
            let (a, b) = (T::of(1.0 - l), T::of(l));
            let mut dst = y.slice_mut(s![.., .., .., o]);
            Zip::from(&mut dst)
                .and(&tmp.slice(s![.., .., .., j0]))
                .and(&tmp.slice(s![.., .., .., j1]))
                .for_each(|d, &p, &q| *d = a * p + b * q);
        }
        y
    }

    pub fn backward<T: Real>(&self, dy: &Array4<T>) -> Array4<T> {
        let (n, c, _, _) = dy.dim();
        if self.from == self.to {
            return dy.clone();
        }
        let (h, w) = self.from;
        let ho = self.to.0;
        let mut dtmp = Array4::<T>::zeros((n, c, ho, w));
        for (o, &(j0, j1, l)) in self.cols.iter().enumerate() {
            let (a, b) = (T::of(1.0 - l), T::of(l));
            let g = dy.slice(s![.., .., .., o]);
            Zip::from(&mut dtmp.slice_mut(s![.., .., .., j0])).and(&g).for_each(|d, &v| *d += a * v);
            Zip::from(&mut dtmp.slice_mut(s![.., .., .., j1])).and(&g).for_each(|d, &v| *d += b * v);
        }
        let mut dx = Array4::<T>::zeros((n, c, h, w));
        for (o, &(i0, i1, l)) in self.rows.iter().enumerate() {
            let (a, b) = (T::of(1.0 - l), T::of(l));
            let g = dtmp.slice(s![.., .., o, ..]);
            Zip::from(&mut dx.slice_mut(s![.., .., i0, ..])).and(&g).for_each(|d, &v| *d += a * v);
            Zip::from(&mut dx.slice_mut(s![.., .., i1, ..])).and(&g).for_each(|d, &v| *d += b * v);
        }
        dx
    }
}

/// Softmax over the channel axis.
pub fn softmax_channels<T: Real>(logits: &Array4<T>) -> Array4<T> {
    let mut p = logits.clone();
    for mut lane in p.lanes_mut(Axis(1)) {
        let max = lane.iter().copied().fold(T::neg_infinity(), T::max);
        lane.mapv_inplace(|v| (v - max).exp());
        let sum: T = lane.sum();
        lane.mapv_inplace(|v| v / sum);
    }
    p
}

/// Mean per-pixel cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &Array4<T>, labels: &Array3<u8>) -> (f64, Array4<T>) {
    let (n, _, h, w) = logits.dim();
    assert_eq!(labels.dim(), (n, h, w), "label shape");
    let mut grad = softmax_channels(logits);
    let count = (n * h * w) as f64;
    let mut loss = 0.0;
    for ((b, i, j), &l) in labels.indexed_iter() {
        let p = grad[[b, l as usize, i, j]].f64().max(1e-30);
        loss -= p.ln();
        grad[[b, l as usize, i, j]] -= T::one();
    }
    let inv = T::of(1.0 / count);
    grad.mapv_inplace(|v| v * inv);
    (loss / count, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    fn check_grad(f: impl Fn(&Array4<f64>) -> f64, x: &Array4<f64>, analytic: &Array4<f64>) {
        let eps = 1e-6;
        for (idx, &a) in analytic.indexed_iter() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[idx] += eps;
            m[idx] -= eps;
            let fd = (f(&p) - f(&m)) / (2.0 * eps);
            assert!((fd - a).abs() < 1e-6 * (1.0 + fd.abs()), "{idx:?}: fd {fd} vs {a}");
        }
    }

    #[test]
    fn batch_norm_gradients() {
        let x = random4((3, 2, 3, 2), 1);
        let r = random4(x.dim(), 2);
        let mut bn = BatchNorm2d::<f64>::new(2);
        bn.gamma = Array1::from(vec![1.5, -0.5]);
        bn.beta = Array1::from(vec![0.1, 0.2]);
        for mode in [Mode::Train, Mode::Eval] {
            let (_, cache) = bn.clone().forward(&x, mode);
            let mut g = bn.zeros_like();
            let dx = bn.backward(&cache, &r, Some(&mut g));
            check_grad(|x| (bn.clone().forward(x, mode).0 * &r).sum(), &x, &dx);
        }
    }

    #[test]
    fn batch_norm_normalises_and_tracks_statistics() {
        let x = random4((4, 3, 5, 5), 3).mapv(|v| 3.0 * v + 2.0);
        let mut bn = BatchNorm2d::<f64>::new(3);
        let (y, _) = bn.forward(&x, Mode::Train);
        for ch in 0..3 {
            let v = y.slice(s![.., ch, .., ..]);
            assert!(v.mean().unwrap().abs() < 1e-12);
            assert!((v.mapv(|a| a * a).mean().unwrap() - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.iter().all(|&m| (m - 0.2).abs() < 0.05));
    }

    #[test]
    fn pooling_routes_gradient_to_the_winner() {
        let x = random4((1, 2, 5, 4), 4);
        let (y, cache) = MaxPool2d.forward(&x);
        assert_eq!(y.dim(), (1, 2, 2, 2));
        let r = random4(y.dim(), 5);
        let dx = MaxPool2d.backward(&cache, &r);
        check_grad(|x| (MaxPool2d.forward(x).0 * &r).sum(), &x, &dx);
    }

    #[test]
    fn resize_adjoint_and_gradients() {
        for (from, to) in [((4, 6), (8, 12)), ((8, 8), (5, 3)), ((3, 3), (3, 3)), ((1, 2), (4, 4))] {
            let rs = Resize::new(from, to);
            let x = random4((2, 1, from.0, from.1), 6);
            let r = random4((2, 1, to.0, to.1), 7);
            let dx = rs.backward(&r);
            // <R x, r> == <x, R^T r>
            let lhs = (rs.forward(&x) * &r).sum();
            let rhs = (&x * &dx).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_matches_half_pixel_reference() {
        // 2 -> 4 upsampling of [0, 1]: sources -0.25 (clamped), 0.25, 0.75, 1.25.
        let x = Array4::from_shape_vec((1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let y = Resize::new((1, 2), (1, 4)).forward(&x);
        assert_eq!(y.iter().copied().collect::<Vec<f64>>(), vec![0.0, 0.25, 0.75, 1.0]);
        let c = Array4::from_elem((1, 1, 3, 5), 2.5);
        assert!(Resize::new((3, 5), (7, 2)).forward(&c).iter().all(|&v: &f64| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn cross_entropy_gradient() {
        let x = random4((2, 3, 2, 2), 8);
        let labels = Array3::from_shape_fn((2, 2, 2), |(b, i, j)| ((b + i + 2 * j) % 3) as u8);
        let (_, g) = cross_entropy(&x, &labels);
        check_grad(|x| cross_entropy(x, &labels).0, &x, &g);
        let (uniform, _) = cross_entropy(&Array4::<f64>::zeros((1, 3, 1, 1)), &Array3::zeros((1, 1, 1)));
        assert!((uniform - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pooled_gradient_and_dropout() {
        let x = random4((2, 3, 4, 5), 9);
        let r = random4((2, 3, 1, 1), 10);
        let dx = global_avg_pool_backward(&r, 4, 5);
        check_grad(|x| (global_avg_pool(x) * &r).sum(), &x, &dx);

        let d = Dropout { p: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, mask) = d.forward(&x, Mode::Train, &mut rng);
        let m = mask.clone().unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        assert_eq!(y, &x * &m);
        assert_eq!(d.backward(&mask, &x), &x * &m);
        assert_eq!(d.forward(&x, Mode::Eval, &mut rng).0, x);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = random4((2, 1, 3, 3), 11);
        let b = random4((2, 4, 3, 3), 12);
        let parts = split_channels(&concat_channels(&[&a, &b]), &[1, 4]);
        assert_eq!(parts, vec![a, b]);
    }
}
