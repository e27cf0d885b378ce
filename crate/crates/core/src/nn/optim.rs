use ndarray::Zip;

use super::{Params, Real};

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay:
/// `v = momentum * v + (g + decay * w)`, `w -= lr * v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn step<T: Real, M: Params<T>>(&self, model: &mut M, grads: &M, velocity: &mut M, lr: f64) {
        let (mu, wd, lr) = (T::of(self.momentum), T::of(self.weight_decay), T::of(lr));
        let g = grads.params();
        for (((name, mut w), (_, mut v)), (gname, g)) in model.params_mut().into_iter().zip(velocity.params_mut()).zip(g) {
            debug_assert_eq!(name, gname);
            Zip::from(&mut w).and(&mut v).and(&g).for_each(|w, v, &g| {
                *v = mu * *v + g + wd * *w;
                *w -= lr * *v;
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Conv2d;
    use rand::SeedableRng;

    #[test]
    fn two_steps_by_hand() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Conv2d::<f64>::new(1, 1, 1, 1, 0, 1, &mut rng);
        model.weight.fill(1.0);
        let mut grads = model.zeros_like();
        grads.weight.fill(0.5);
        let mut vel = model.zeros_like();
        let opt = Sgd { momentum: 0.9, weight_decay: 0.1 };
        opt.step(&mut model, &grads, &mut vel, 0.1);
        // v = 0.5 + 0.1 = 0.6, w = 1 - 0.06
        assert!((model.weight[[0, 0, 0, 0]] - 0.94).abs() < 1e-15);
        opt.step(&mut model, &grads, &mut vel, 0.1);
        // v = 0.54 + 0.5 + 0.094 = 1.134, w = 0.94 - 0.1134
        assert!((model.weight[[0, 0, 0, 0]] - 0.8266).abs() < 1e-12);
        assert_eq!(model.bias[0], 0.0);
    }
}
