//! Fast interaction fields via discrete convolution.
//!
//! For translation-invariant weights Ψ(x, y) = φ(x − y) and separable
//! couplings the per-site field reduces to convolutions of per-site feature
//! channels against a fixed kernel table.  Periodic boundaries use circular
//! convolution of length 2N per axis; free boundaries zero-pad to twice the
//! axis length so the linear convolution comes out exact.  The zero
//! displacement entry of the table is set to 0, which removes the j = i term
//! from the sum exactly.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::lattice::{Boundary, LatticeConfig, WeightKernel};
use crate::simulate::SimError;

pub struct ConvPlan {
    dim: usize,
    axis_len: usize,
    padded: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex<f64>>,
    buf: Vec<Complex<f64>>,
    line: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl ConvPlan {
    pub fn new(kernel: &WeightKernel, lattice: &LatticeConfig) -> Result<Self, SimError> {
        if !kernel.is_translation_invariant() {
            return Err(SimError::Unsupported(
                "convolution engine requires a translation-invariant kernel".into(),
            ));
        }
        if lattice.dim > 2 {
            return Err(SimError::Unsupported("convolution engine supports d <= 2".into()));
        }
        if lattice.half_width == 0 {
            return Err(SimError::Unsupported("convolution engine needs N >= 1".into()));
        }
        let dim = lattice.dim;
        let axis_len = lattice.axis_len();
        let padded = match lattice.boundary {
            Boundary::Free => 2 * axis_len,
            Boundary::Periodic => axis_len,
        };
        let total = padded.pow(dim as u32);

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(padded);
        let inverse = planner.plan_fft_inverse(padded);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());

        let inv2n = 1.0 / (2.0 * lattice.half_width as f64);
        let half = lattice.half_width as i64;
        let mut table = vec![Complex::new(0.0, 0.0); total];
        let span: Vec<i64> = match lattice.boundary {
            // Linear convolution touches displacements up to ±(L−1).
            Boundary::Free => (-(axis_len as i64 - 1)..axis_len as i64).collect(),
            // Minimal images on the even torus live in [−N, N−1].
            Boundary::Periodic => (-half..half).collect(),
        };
        match dim {
            1 => {
                for &du in &span {
                    if du == 0 {
                        continue;
                    }
                    let slot = du.rem_euclid(padded as i64) as usize;
                    table[slot] = Complex::new(kernel.phi(&[du as f64 * inv2n])?, 0.0);
                }
            }
            2 => {
                for &dux in &span {
                    for &duy in &span {
                        if dux == 0 && duy == 0 {
                            continue;
                        }
                        let sx = dux.rem_euclid(padded as i64) as usize;
                        let sy = duy.rem_euclid(padded as i64) as usize;
                        let phi = kernel.phi(&[dux as f64 * inv2n, duy as f64 * inv2n])?;
                        table[sx * padded + sy] = Complex::new(phi, 0.0);
                    }
                }
            }
            _ => unreachable!(),
        }

        let mut plan = ConvPlan {
            dim,
            axis_len,
            padded,
            forward,
            inverse,
            kernel_hat: Vec::new(),
            buf: vec![Complex::new(0.0, 0.0); total],
            line: vec![Complex::new(0.0, 0.0); padded],
            scratch: vec![Complex::new(0.0, 0.0); scratch_len],
        };
        plan.fft_axes(&mut table, true);
        plan.kernel_hat = table;
        Ok(plan)
    }

    fn fft_axes(&mut self, data: &mut [Complex<f64>], fwd: bool) {
        let p = self.padded;
        let fft = if fwd { self.forward.clone() } else { self.inverse.clone() };
        match self.dim {
            1 => fft.process_with_scratch(data, &mut self.scratch),
            2 => {
                for row in data.chunks_exact_mut(p) {
                    fft.process_with_scratch(row, &mut self.scratch);
                }
                for col in 0..p {
                    for row in 0..p {
                        self.line[row] = data[row * p + col];
                    }
                    fft.process_with_scratch(&mut self.line, &mut self.scratch);
                    for row in 0..p {
                        data[row * p + col] = self.line[row];
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    /// Circular/linear convolution of one per-site channel against the kernel
    /// table: output_i = Σ_j φ(x_i − x_j) input_j with the self term dropped.
    pub fn convolve(&mut self, input: &[f64], output: &mut [f64]) {
        let p = self.padded;
        let l = self.axis_len;
        self.buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
        match self.dim {
            1 => {
                for (j, &v) in input.iter().enumerate() {
                    self.buf[j] = Complex::new(v, 0.0);
                }
            }
            2 => {
                for jx in 0..l {
                    for jy in 0..l {
                        self.buf[jx * p + jy] = Complex::new(input[jx * l + jy], 0.0);
                    }
                }
            }
            _ => unreachable!(),
        }
        let mut buf = std::mem::take(&mut self.buf);
        self.fft_axes(&mut buf, true);
        for (z, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *z *= *k;
        }
        self.fft_axes(&mut buf, false);
        let norm = 1.0 / (p as f64).powi(self.dim as i32);
        match self.dim {
            1 => {
                for (i, out) in output.iter_mut().enumerate().take(l) {
                    *out = buf[i].re * norm;
                }
            }
            2 => {
                for ix in 0..l {
                    for iy in 0..l {
                        output[ix * l + iy] = buf[ix * p + iy].re * norm;
                    }
                }
            }
            _ => unreachable!(),
        }
        self.buf = buf;
    }
}
