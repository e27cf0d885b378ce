use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{Params, Real};

/// 2D convolution with square kernels, zero padding, stride and dilation,
/// computed as im2col followed by a matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `(out, in, k, k)`.
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

/// What `Conv2d::backward` needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    input: Array4<T>,
}

impl<T: Real> Conv2d<T> {
    /// He-normal weights, zero bias.
    pub fn new<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, dilation: usize, rng: &mut R) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let weight = Array4::from_shape_simple_fn((cout, cin, k, k), || {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        });
        Self {
            weight,
            bias: Array1::zeros(cout),
            stride,
            pad,
            dilation,
        }
    }

    /// "Same" convolution for odd kernels at stride 1.
    pub fn same<R: Rng>(cin: usize, cout: usize, k: usize, dilation: usize, rng: &mut R) -> Self {
        Self::new(cin, cout, k, 1, dilation * (k - 1) / 2, dilation, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    /// Width of the input window seen by one output pixel.
    pub fn span(&self) -> usize {
        self.dilation * (self.kernel() - 1) + 1
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.pad).saturating_sub(self.span()) / self.stride + 1;
        (f(h), f(w))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1 && self.pad == 0
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let (o, i, k, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((o, i * k * k))
            .expect("weights are contiguous")
    }

    fn im2col(&self, x: ArrayView3<'_, T>, ho: usize, wo: usize) -> Array2<T> {
        let (c, h, w) = x.dim();
        let k = self.kernel();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut cols = Array2::<T>::zeros((c * k * k, ho * wo));
        let (s, d, p) = (self.stride as isize, self.dilation as isize, self.pad as isize);
        for (row, mut out) in cols.axis_iter_mut(Axis(0)).enumerate() {
            let (ci, ki, kj) = (row / (k * k), (row / k) % k, row % k);
            let out = out.as_slice_mut().expect("row is contiguous");
            let plane = &xs[ci * h * w..(ci + 1) * h * w];
            for i in 0..ho {
                let ii = i as isize * s + ki as isize * d - p;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                let dst = &mut out[i * wo..(i + 1) * wo];
                for (j, v) in dst.iter_mut().enumerate() {
                    let jj = j as isize * s + kj as isize * d - p;
                    if jj >= 0 && jj < w as isize {
                        *v = src[jj as usize];
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<T>, c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Array3<T> {
        let k = self.kernel();
        let mut x = vec![T::zero(); c * h * w];
        let (s, d, p) = (self.stride as isize, self.dilation as isize, self.pad as isize);
        for (row, src) in cols.axis_iter(Axis(0)).enumerate() {
            let (ci, ki, kj) = (row / (k * k), (row / k) % k, row % k);
            let src = src.to_slice().expect("row is contiguous");
            let plane = &mut x[ci * h * w..(ci + 1) * h * w];
            for i in 0..ho {
                let ii = i as isize * s + ki as isize * d - p;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                for (j, v) in src[i * wo..(i + 1) * wo].iter().enumerate() {
                    let jj = j as isize * s + kj as isize * d - p;
                    if jj >= 0 && jj < w as isize {
                        dst[jj as usize] += *v;
                    }
                }
            }
        }
        Array3::from_shape_vec((c, h, w), x).expect("sizes agree")
    }

    fn forward_one(&self, x: ArrayView3<'_, T>) -> Array3<T> {
        let (_, h, w) = x.dim();
        let (ho, wo) = self.output_size(h, w);
        let cout = self.out_channels();
        let mut y = Array2::<T>::zeros((cout, ho * wo));
        if self.is_pointwise() {
            let x = x.as_standard_layout();
            let xm = x.view().into_shape_with_order((x.dim().0, h * w)).expect("contiguous");
            general_mat_mul(T::one(), &self.weight_matrix(), &xm, T::zero(), &mut y);
        } else {
            let cols = self.im2col(x, ho, wo);
            general_mat_mul(T::one(), &self.weight_matrix(), &cols, T::zero(), &mut y);
        }
        for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        y.into_shape_with_order((cout, ho, wo)).expect("sizes agree")
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, ConvCache<T>) {
        (self.infer(x), ConvCache { input: x.clone() })
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, x: &Array4<T>) -> Array4<T> {
        assert_eq!(x.dim().1, self.in_channels(), "conv input channels");
        let outs: Vec<Array3<T>> = (0..x.dim().0)
            .into_par_iter()
            .map(|b| self.forward_one(x.index_axis(Axis(0), b)))
            .collect();
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        ndarray::stack(Axis(0), &views).expect("equal output shapes")
    }

    /// Returns the input gradient when `want_input_grad`, and accumulates
    /// weight and bias gradients into `grad` when given.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        dy: &Array4<T>,
        grad: Option<&mut Conv2d<T>>,
        want_input_grad: bool,
    ) -> Option<Array4<T>> {
        let (n, c, h, w) = cache.input.dim();
        let (_, cout, ho, wo) = dy.dim();
        let wm = self.weight_matrix();
        let need_w = grad.is_some();
        let per_sample: Vec<(Option<Array3<T>>, Option<Array2<T>>)> = (0..n)
            .into_par_iter()
            .map(|b| {
                let dyb = dy.index_axis(Axis(0), b);
                let dyb = dyb.as_standard_layout();
                let dy2 = dyb.view().into_shape_with_order((cout, ho * wo)).expect("contiguous");
                let dx = want_input_grad.then(|| {
                    let mut dcols = Array2::<T>::zeros((wm.dim().1, ho * wo));
                    general_mat_mul(T::one(), &wm.t(), &dy2, T::zero(), &mut dcols);
                    if self.is_pointwise() {
                        dcols.into_shape_with_order((c, h, w)).expect("sizes agree")
                    } else {
                        self.col2im(&dcols, c, h, w, ho, wo)
                    }
                });
                let dw = need_w.then(|| {
                    let xb = cache.input.index_axis(Axis(0), b);
                    let cols = if self.is_pointwise() {
                        xb.as_standard_layout()
                            .into_owned()
                            .into_shape_with_order((c, h * w))
                            .expect("contiguous")
                    } else {
                        self.im2col(xb, ho, wo)
                    };
                    let mut dw = Array2::<T>::zeros(wm.dim());
                    general_mat_mul(T::one(), &dy2, &cols.t(), T::zero(), &mut dw);
                    dw
                });
                (dx, dw)
            })
            .collect();

        if let Some(g) = grad {
            let (o, i, k, _) = g.weight.dim();
            let mut gw = g
                .weight
                .view_mut()
                .into_shape_with_order((o, i * k * k))
                .expect("contiguous");
            for (_, dw) in &per_sample {
                gw += dw.as_ref().expect("computed");
            }
            for b in 0..n {
                for (co, gb) in g.bias.iter_mut().enumerate() {
                    *gb += dy.slice(ndarray::s![b, co, .., ..]).sum();
                }
            }
        }
        want_input_grad.then(|| {
            let views: Vec<_> = per_sample.iter().map(|(dx, _)| dx.as_ref().expect("computed").view()).collect();
            ndarray::stack(Axis(0), &views).expect("equal shapes")
        })
    }
}

impl<T: Real> Params<T> for Conv2d<T> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        vec![
            ("weight".into(), self.weight.view().into_dyn()),
            ("bias".into(), self.bias.view().into_dyn()),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        vec![
            ("weight".into(), self.weight.view_mut().into_dyn()),
            ("bias".into(), self.bias.view_mut().into_dyn()),
        ]
    }
}
