use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Argmax routing recorded by [`maxpool2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// Flat input index of the selected cell, one per output element.
    pub flat_argmax: Vec<usize>,
}

/// Non-overlapping max pooling of a `[C, H, W]` map with floor semantics.
///
/// Ties resolve to the first cell of the window in row-major order.
pub fn maxpool2d<T: Real>(x: &Tensor<T>, ph: usize, pw: usize) -> Result<(Tensor<T>, PoolIndices)> {
    x.expect_rank("maxpool2d", 3)?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if ph == 0 || pw == 0 {
        return Err(Error::Argument(alloc::format!(
            "maxpool2d: window must be positive, got ({ph}, {pw})"
        )));
    }
    if ph > h || pw > w {
        return Err(Error::Argument(alloc::format!(
            "maxpool2d: window ({ph}, {pw}) exceeds input ({h}, {w})"
        )));
    }
    let (oh, ow) = (h / ph, w / pw);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best_idx = base + oi * ph * w + oj * pw;
                let mut best = xd[best_idx];
                for u in 0..ph {
                    let row = base + (oi * ph + u) * w + oj * pw;
                    for v in 0..pw {
                        let val = xd[row + v];
                        if val > best {
                            best = val;
                            best_idx = row + v;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    let out_shape = alloc::vec![c, oh, ow];
    Ok((
        Tensor::new(&out_shape, out)?,
        PoolIndices {
            in_shape: x.shape().to_vec(),
            out_shape,
            flat_argmax: arg,
        },
    ))
}

/// Routes `dy` back to the recorded argmax cells; everything else gets zero.
pub fn maxpool2d_grad<T: Real>(idx: &PoolIndices, dy: &Tensor<T>, in_shape: &[usize]) -> Result<Tensor<T>> {
    if dy.shape() != idx.out_shape.as_slice() {
        return Err(shape_err("maxpool2d_grad", dy.shape(), &idx.out_shape));
    }
    if idx.flat_argmax.len() != dy.len() {
        return Err(Error::Internal(alloc::format!(
            "pool indices hold {} entries for {} outputs",
            idx.flat_argmax.len(),
            dy.len()
        )));
    }
    let mut dx = Tensor::zeros(in_shape);
    let n = dx.len();
    let dxd = dx.data_mut();
    for (&i, &g) in idx.flat_argmax.iter().zip(dy.data()) {
        if i >= n {
            return Err(Error::Internal(alloc::format!(
                "pool index {i} outside input of {n} elements"
            )));
        }
        dxd[i] = dxd[i] + g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::fd;
    use alloc::vec;

    #[test]
    fn single_window() {
        let x = Tensor::<f32>::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = maxpool2d_grad(&idx, &Tensor::full(&[1, 1, 1], 1.0), x.shape()).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 1.0]);
        let dz = maxpool2d_grad(&idx, &Tensor::<f32>::zeros(&[1, 1, 1]), x.shape()).unwrap();
        assert!(dz.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn canonical_schedule_floor_chain() {
        // independent of the kernel: plain integer division per level
        let schedule = [(2, 4), (2, 4), (2, 4), (3, 5), (4, 4)];
        let expected = [(48, 341), (24, 85), (12, 21), (4, 4), (1, 1)];
        let (mut h, mut w) = (96usize, 1366usize);
        let mut x = Tensor::<f32>::zeros(&[1, h, w]);
        for (&(ph, pw), &(eh, ew)) in schedule.iter().zip(&expected) {
            let (y, _) = maxpool2d(&x, ph, pw).unwrap();
            h /= ph;
            w /= pw;
            assert_eq!((h, w), (eh, ew));
            assert_eq!(y.shape(), &[1, eh, ew]);
            x = y;
        }
    }

    #[test]
    fn constant_input_picks_first_cell() {
        let x = Tensor::<f32>::full(&[2, 4, 6], 3.0);
        let (y, idx) = maxpool2d(&x, 2, 3).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
        let firsts: Vec<usize> = (0..2)
            .flat_map(|c| (0..2).flat_map(move |i| (0..2).map(move |j| c * 24 + i * 2 * 6 + j * 3)))
            .collect();
        assert_eq!(idx.flat_argmax, firsts);
    }

    #[test]
    fn rejects_bad_windows() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4]);
        assert!(matches!(maxpool2d(&x, 0, 2), Err(Error::Argument(_))));
        assert!(matches!(maxpool2d(&x, 2, 0), Err(Error::Argument(_))));
        assert!(matches!(maxpool2d(&x, 5, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn out_of_range_index_is_internal_error() {
        let idx = PoolIndices {
            in_shape: vec![1, 2, 2],
            out_shape: vec![1, 1, 1],
            flat_argmax: vec![9],
        };
        let r = maxpool2d_grad(&idx, &Tensor::<f32>::full(&[1, 1, 1], 1.0), &[1, 2, 2]);
        assert!(matches!(r, Err(Error::Internal(_))));
    }

    #[test]
    fn drops_trailing_cells() {
        let x = fd::random(&[1, 5, 7], 3);
        let (y, idx) = maxpool2d(&x, 2, 3).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        let dx = maxpool2d_grad(&idx, &Tensor::full(&[1, 2, 2], 1.0), x.shape()).unwrap();
        for i in 0..5 {
            for j in 0..7 {
                if i >= 4 || j >= 6 {
                    assert_eq!(dx.data()[i * 7 + j], 0.0);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            // random continuous values are tie-free with probability one and
            // window gaps are far larger than the probe step
            let x = fd::random(&[2, 6, 8], 50 + seed);
            let g = fd::random(&[2, 3, 2], 80 + seed);
            let (_, idx) = maxpool2d(&x, 2, 4).unwrap();
            let dx = maxpool2d_grad(&idx, &g, x.shape()).unwrap();
            let num = fd::numeric_grad(&x, |p| fd::weighted_sum(&maxpool2d(p, 2, 4).unwrap().0, &g));
            assert!(fd::max_rel_err(&dx, &num) < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn output_is_window_element_and_routing_is_one_hot() {
        for seed in 0..20u64 {
            let x = fd::random(&[3, 7, 9], 500 + seed);
            let (y, idx) = maxpool2d(&x, 3, 2).unwrap();
            let (oh, ow) = (2, 4);
            for c in 0..3 {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let k = (c * oh + oi) * ow + oj;
                        let a = idx.flat_argmax[k];
                        let (ai, aj) = ((a % 63) / 9, a % 9);
                        assert_eq!(a / 63, c);
                        assert!(ai / 3 == oi && aj / 2 == oj);
                        assert_eq!(y.data()[k], x.data()[a]);
                        for u in 0..3 {
                            for v in 0..2 {
                                assert!(x.data()[c * 63 + (oi * 3 + u) * 9 + oj * 2 + v] <= y.data()[k]);
                            }
                        }
                    }
                }
            }
            let dx = maxpool2d_grad(&idx, &Tensor::full(y.shape(), 1.0), x.shape()).unwrap();
            assert!(dx.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert_eq!(dx.data().iter().sum::<f64>(), y.len() as f64);
        }
    }
}
