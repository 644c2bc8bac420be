//! Separable Gaussian smoothing with edge replication.

use crate::error::{Error, Result};
use crate::volume::{Dims, ScalarField};

/// Normalized 1-D Gaussian kernel truncated at `ceil(3 * sigma)` taps each side.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid(format!("sigma must be finite and > 0, got {sigma}")));
    }
    let half = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for w in &mut k {
        *w /= sum;
    }
    Ok(k)
}

fn convolve_axis(dims: Dims, data: &[f64], kernel: &[f64], stride: usize, extent: usize) -> Vec<f64> {
    let half = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; data.len()];
    let (nx, ny) = (dims.nx, dims.ny);
    for idx in 0..data.len() {
        let x = idx % nx;
        let y = (idx / nx) % ny;
        let z = idx / (nx * ny);
        let pos = match stride {
            1 => x,
            s if s == nx => y,
            _ => z,
        } as i64;
        let base = idx - pos as usize * stride;
        let mut acc = 0.0;
        for (k, &w) in kernel.iter().enumerate() {
            // Edge replication: clamp the tap position to the axis extent.
            let t = (pos + k as i64 - half).clamp(0, extent as i64 - 1) as usize;
            acc += w * data[base + t * stride];
        }
        out[idx] = acc;
    }
    out
}

/// Separable Gaussian convolution along each axis, boundary handled by edge
/// replication. Output dims equal input dims.
pub fn gaussian_smooth(field: &ScalarField, sigma: f64) -> Result<ScalarField> {
    let kernel = gaussian_kernel(sigma)?;
    let dims = field.dims();
    let x = convolve_axis(dims, field.data(), &kernel, 1, dims.nx);
    let y = convolve_axis(dims, &x, &kernel, dims.nx, dims.ny);
    let z = convolve_axis(dims, &y, &kernel, dims.nx * dims.ny, dims.nz);
    Ok(ScalarField::from_raw_unchecked(dims, z))
}
