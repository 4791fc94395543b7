//! Multi-dimensional FFTs on row-major arrays.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};

/// In-place unnormalized transform along every axis. `Forward` uses
/// `e^{-2 pi i jk/N}`.
pub fn fft_nd(data: &mut [Complex64], shape: &[usize], direction: FftDirection) {
    assert_eq!(data.len(), shape.iter().product::<usize>());
    let mut planner = FftPlanner::new();
    let ndim = shape.len();
    for axis in 0..ndim {
        let len = shape[axis];
        if len <= 1 {
            continue;
        }
        let fft = planner.plan_fft(len, direction);
        let stride: usize = shape[axis + 1..].iter().product();
        if stride == 1 {
            data.par_chunks_mut(len).for_each(|line| fft.process(line));
            continue;
        }
        let block = len * stride;
        data.par_chunks_mut(block).for_each(|chunk| {
            let mut line = vec![Complex64::default(); len];
            for offset in 0..stride {
                for (k, v) in line.iter_mut().enumerate() {
                    *v = chunk[offset + k * stride];
                }
                fft.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    chunk[offset + k * stride] = *v;
                }
            }
        });
    }
}

/// Smallest `m >= n` of the form `2^a 3^b 5^c`.
pub fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}
