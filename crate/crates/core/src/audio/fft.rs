//! Iterative radix-2 Cooley-Tukey FFT.

use alloc::vec::Vec;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::real::Real;

/// Unnormalized forward DFT `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
pub fn fft_radix2<T: Real>(signal: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    let mut buf = signal.to_vec();
    fft_in_place(&mut buf)?;
    Ok(buf)
}

pub fn fft_in_place<T: Real>(buf: &mut [Complex<T>]) -> Result<()> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Argument(alloc::format!(
            "fft length must be a power of two, got {n}"
        )));
    }
    let bits = n.trailing_zeros();
    if bits == 0 {
        return Ok(());
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    // twiddles for the largest stage; smaller stages stride through them
    let half = n / 2;
    let twiddles: Vec<Complex<T>> = (0..half)
        .map(|k| {
            let a = -2.0 * core::f64::consts::PI * k as f64 / n as f64;
            Complex::new(T::of(libm::cos(a)), T::of(libm::sin(a)))
        })
        .collect();
    let mut len = 2;
    while len <= n {
        let step = n / len;
        let h = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..h {
                let t = twiddles[k * step] * buf[start + k + h];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + h] = u - t;
            }
        }
        len *= 2;
    }
    Ok(())
}
