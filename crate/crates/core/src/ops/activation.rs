use core::str::FromStr;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(Error::Argument(alloc::format!("unknown activation kind {other:?}"))),
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Real>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Backward of [`activation`]; ReLU takes subgradient 0 at the kink.
pub fn activation_grad<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    dy.expect_shape("activation_grad", x.shape())?;
    let mut dx = dy.clone();
    match kind {
        Activation::Relu => {
            for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                if v <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        Activation::Sigmoid => {
            for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                let s = sigmoid(v);
                *d = *d * s * (T::one() - s);
            }
        }
    }
    Ok(dx)
}
