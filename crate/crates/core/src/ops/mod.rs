//! Differentiable kernels with hand-derived backward passes.
//!
//! Every forward op is a pure function of its inputs; backward ops take the
//! forward inputs (or a cache) plus the upstream gradient.

mod activation;
mod concat;
mod conv;
mod dense;
mod norm;
mod pool;

pub use activation::{activation, activation_grad, sigmoid, Activation};
pub use concat::{concat_channels, concat_grad};
pub use conv::{conv2d, conv2d_grad, KERNEL};
pub use dense::{dense, dense_grad};
pub use norm::{batchnorm2d, batchnorm2d_grad, BnCache, BnMode, BnOutput, BnStats, BN_EPS, BN_MOMENTUM};
pub use pool::{maxpool2d, maxpool2d_grad, PoolIndices};

#[cfg(test)]
pub(crate) mod fd {
    //! Central finite differences for kernel tests.
    use crate::tensor::Tensor;

    pub const EPS: f64 = 1e-4;

    /// Numerical gradient of `f` with respect to every element of `x`.
    pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
        let mut probe = x.clone();
        let mut g = Tensor::zeros(x.shape());
        for i in 0..x.len() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + EPS;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - EPS;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * EPS);
        }
        g
    }

    pub fn weighted_sum(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    /// Worst elementwise relative error, with a 1e-6 magnitude floor so
    /// structurally zero gradients compare absolutely.
    pub fn max_rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }
}
