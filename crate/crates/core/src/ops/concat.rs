use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Stacks `[C_k, H, W]` maps along the channel axis, in list order.
pub fn concat_channels<T: Real>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Argument("concat_channels: empty input list".into()))?;
    first.expect_rank("concat_channels", 3)?;
    let spatial = &first.shape()[1..];
    let mut channels = 0;
    for (i, x) in xs.iter().enumerate() {
        if x.ndim() != 3 || &x.shape()[1..] != spatial {
            return Err(Error::ConcatMismatch {
                op: "concat_channels",
                index: i,
                expected: spatial.to_vec(),
                got: x.shape().to_vec(),
            });
        }
        channels += x.shape()[0];
    }
    let mut data = Vec::with_capacity(channels * spatial[0] * spatial[1]);
    for x in xs {
        data.extend_from_slice(x.data());
    }
    Tensor::new(&[channels, spatial[0], spatial[1]], data)
}

/// Splits a channel-concatenated gradient back into its parts.
pub fn concat_grad<T: Real>(dy: &Tensor<T>, channel_sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    dy.expect_rank("concat_grad", 3)?;
    let total: usize = channel_sizes.iter().sum();
    if total != dy.shape()[0] || channel_sizes.contains(&0) {
        return Err(shape_err("concat_grad", dy.shape(), channel_sizes));
    }
    let plane = dy.shape()[1] * dy.shape()[2];
    let mut out = Vec::with_capacity(channel_sizes.len());
    let mut start = 0;
    for &c in channel_sizes {
        out.push(Tensor::new(
            &[c, dy.shape()[1], dy.shape()[2]],
            dy.data()[start * plane..(start + c) * plane].to_vec(),
        )?);
        start += c;
    }
    Ok(out)
}
