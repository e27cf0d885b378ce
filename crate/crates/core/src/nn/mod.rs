//! A small CPU neural-network toolkit: just enough layers, explicit backward
//! passes and an optimiser to train the segmentation network and to
//! differentiate style losses with respect to an input image.
//!
//! Tensors are `(batch, channel, height, width)` arrays. Layers do not keep
//! state between calls: `forward` returns a cache that the caller hands back to
//! `backward`, so frozen networks can be shared across threads. Gradients are
//! accumulated into a zeroed clone of the network (`Params::zeros_like`).

mod archive;
mod conv;
mod layers;
mod optim;

pub use archive::{read_archive, write_archive, Manifest, TensorArchive};
pub use conv::{Conv2d, ConvCache};
pub use layers::{
    concat_channels, cross_entropy, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    softmax_channels, split_channels, BatchNorm2d, BnCache, Dropout, MaxPool2d, PoolCache, Resize,
};
pub use optim::Sgd;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{ArrayViewD, ArrayViewMutD};

/// Floating-point element type for network tensors.
pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

/// Whether a forward pass updates normalisation statistics and drops units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named trainable tensors, visited in a fixed order.
pub trait Params<T: Real> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, T>)>;
    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)>;

    /// Non-trainable state saved with checkpoints (e.g. running statistics).
    fn buffers(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        Vec::new()
    }

    fn zeros_like(&self) -> Self
    where
        Self: Sized + Clone,
    {
        let mut z = self.clone();
        for (_, mut p) in z.params_mut() {
            p.fill(T::zero());
        }
        z
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

/// Prefixes every name with `prefix.`.
pub(crate) fn scoped<V>(prefix: &str, items: Vec<(String, V)>) -> Vec<(String, V)> {
    items.into_iter().map(|(n, v)| (format!("{prefix}.{n}"), v)).collect()
}
