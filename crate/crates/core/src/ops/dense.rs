use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// `y = W x + b` for `x: [D]`, `W: [T, D]`, `b: [T]`.
pub fn dense<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (t, d) = dims(x, w)?;
    b.expect_shape("dense bias", &[t])?;
    let xd = x.data();
    Tensor::new(
        &[t],
        (0..t)
            .map(|r| {
                let row = &w.data()[r * d..(r + 1) * d];
                row.iter().zip(xd).fold(b.data()[r], |acc, (&a, &v)| acc + a * v)
            })
            .collect(),
    )
}

pub fn dense_grad<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (t, d) = dims(x, w)?;
    dy.expect_shape("dense_grad", &[t])?;
    let mut dx = Tensor::zeros(&[d]);
    let mut dw = Tensor::zeros(&[t, d]);
    for r in 0..t {
        let g = dy.data()[r];
        let row = &w.data()[r * d..(r + 1) * d];
        for (o, &a) in dx.data_mut().iter_mut().zip(row) {
            *o = *o + a * g;
        }
        for (o, &v) in dw.data_mut()[r * d..(r + 1) * d].iter_mut().zip(x.data()) {
            *o = v * g;
        }
    }
    Ok((dx, dw, dy.clone()))
}

fn dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize)> {
    x.expect_rank("dense", 1)?;
    w.expect_rank("dense", 2)?;
    if w.shape()[1] != x.len() {
        return Err(shape_err("dense", x.shape(), w.shape()));
    }
    Ok((w.shape()[0], w.shape()[1]))
}
