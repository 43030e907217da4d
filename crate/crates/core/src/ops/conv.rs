use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Spatial kernel extent (square, stride 1, zero padding 1).
pub const KERNEL: usize = 3;

/// Index ranges `[lo, hi)` of output rows/cols that read a valid input
/// position at kernel offset `d` (in -1..=1).
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { len.saturating_sub(d as usize) } else { len };
    (lo, hi.max(lo))
}

fn check_shapes<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    x.expect_rank("conv2d", 3)?;
    w.expect_rank("conv2d", 4)?;
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let cout = w.shape()[0];
    if w.shape()[1] != cin || w.shape()[2] != KERNEL || w.shape()[3] != KERNEL {
        return Err(shape_err("conv2d", x.shape(), w.shape()));
    }
    Ok((cin, cout, h, wd))
}

/// 3x3 "same" convolution of a single `[C_in, H, W]` map.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (cin, cout, h, wd) = check_shapes(x, w)?;
    b.expect_shape("conv2d bias", &[cout])?;
    let hw = h * wd;
    let mut y = Vec::with_capacity(cout * hw);
    for o in 0..cout {
        y.extend(core::iter::repeat_n(b.data()[o], hw));
    }
    let xd = x.data();
    let wdat = w.data();
    for o in 0..cout {
        let yo = &mut y[o * hw..(o + 1) * hw];
        for c in 0..cin {
            let xc = &xd[c * hw..(c + 1) * hw];
            let kbase = (o * cin + c) * KERNEL * KERNEL;
            for u in 0..KERNEL {
                let di = u as isize - 1;
                let (ilo, ihi) = valid_range(h, di);
                for v in 0..KERNEL {
                    let dj = v as isize - 1;
                    let (jlo, jhi) = valid_range(wd, dj);
                    let k = wdat[kbase + u * KERNEL + v];
                    if jhi <= jlo {
                        continue;
                    }
                    let n = jhi - jlo;
                    let xj = (jlo as isize + dj) as usize;
                    for i in ilo..ihi {
                        let xi = (i as isize + di) as usize;
                        let yrow = &mut yo[i * wd + jlo..i * wd + jlo + n];
                        let xrow = &xc[xi * wd + xj..xi * wd + xj + n];
                        for (yv, &xv) in yrow.iter_mut().zip(xrow) {
                            *yv = *yv + k * xv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[cout, h, wd], y)
}

/// Gradients of `sum(dy * conv2d(x, w, b))` with respect to `x`, `w` and `b`.
pub fn conv2d_grad<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (cin, cout, h, wd) = check_shapes(x, w)?;
    dy.expect_shape("conv2d_grad", &[cout, h, wd])?;
    let hw = h * wd;
    let xd = x.data();
    let wdat = w.data();
    let dyd = dy.data();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[cout]);
    {
        let dxd = dx.data_mut();
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for o in 0..cout {
            let go = &dyd[o * hw..(o + 1) * hw];
            dbd[o] = go.iter().copied().sum();
            for c in 0..cin {
                let xc = &xd[c * hw..(c + 1) * hw];
                let kbase = (o * cin + c) * KERNEL * KERNEL;
                for u in 0..KERNEL {
                    let di = u as isize - 1;
                    let (ilo, ihi) = valid_range(h, di);
                    for v in 0..KERNEL {
                        let dj = v as isize - 1;
                        let (jlo, jhi) = valid_range(wd, dj);
                        if jhi <= jlo {
                            continue;
                        }
                        let n = jhi - jlo;
                        let xj = (jlo as isize + dj) as usize;
                        let k = wdat[kbase + u * KERNEL + v];
                        let mut acc = T::zero();
                        for i in ilo..ihi {
                            let xi = (i as isize + di) as usize;
                            let grow = &go[i * wd + jlo..i * wd + jlo + n];
                            let xrow = &xc[xi * wd + xj..xi * wd + xj + n];
                            let mut row = T::zero();
                            for (&g, &xv) in grow.iter().zip(xrow) {
                                row = row + g * xv;
                            }
                            acc = acc + row;
                            let dxrow = &mut dxd[c * hw + xi * wd + xj..c * hw + xi * wd + xj + n];
                            for (d, &g) in dxrow.iter_mut().zip(grow) {
                                *d = *d + k * g;
                            }
                        }
                        dwd[kbase + u * KERNEL + v] = acc;
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}
