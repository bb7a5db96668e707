//! Compact physical summaries of an initial field.
//!
//! 1D: `[E0, A_max, x_c, σ_x², P0, Δk]`.
//! 2D: `[E0, A_max, x_c, y_c, σ_x², σ_y², P_x, P_y, Δk_x, Δk_y]`.
//!
//! Integrals are Riemann sums with the cell volume as weight. Spectral moments
//! use the unshifted DFT power spectrum against signed wavenumbers.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Spectral;
use crate::grid::{ComplexField, Dataset};
use crate::norm::NormStats;

pub const NAMES_1D: [&str; 6] = ["E0", "A_max", "x_c", "sigma_x2", "P0", "delta_k"];
pub const NAMES_2D: [&str; 10] = [
    "E0", "A_max", "x_c", "y_c", "sigma_x2", "sigma_y2", "P_x", "P_y", "delta_kx", "delta_ky",
];

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorVector(pub Vec<f64>);

impl DescriptorVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn names(&self) -> &'static [&'static str] {
        if self.0.len() == NAMES_1D.len() {
            &NAMES_1D
        } else {
            &NAMES_2D
        }
    }
}

fn check_mass(field: &ComplexField) -> Result<f64> {
    let e0 = field.mass();
    if !(e0 > 0.0 && e0.is_finite()) {
        return Err(Error::DegenerateField(format!("total intensity {e0}")));
    }
    Ok(e0)
}

/// Mean and centered second moment of `k` under weights `w`.
fn spectral_moments(k: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let total: f64 = k.clone().map(|(_, w)| w).sum();
    let mean = k.clone().map(|(k, w)| k * w).sum::<f64>() / total;
    let var = k.map(|(k, w)| (k - mean) * (k - mean) * w).sum::<f64>() / total;
    (mean, var.max(0.0))
}

pub fn descriptors_1d(field: &ComplexField) -> Result<DescriptorVector> {
    let grid = *field.grid();
    if grid.dim() != 1 {
        return Err(Error::Shape("descriptors_1d needs a 1D field".into()));
    }
    let e0 = check_mass(field)?;
    let dx = grid.cell_volume();
    let xs = grid.x().coords();
    let psi = field.data();
    let dens: Vec<f64> = psi.iter().map(|z| z.norm_sqr()).collect();

    let a_max = field.max_abs();
    let xc = xs.iter().zip(&dens).map(|(x, d)| x * d).sum::<f64>() * dx / e0;
    let var = xs.iter().zip(&dens).map(|(x, d)| (x - xc) * (x - xc) * d).sum::<f64>() * dx / e0;

    let k = grid.x().wavenumbers();
    let mut spectral = Spectral::new(&grid);
    let mut hat = psi.to_vec();
    spectral.forward(&mut hat);
    let power: Vec<f64> = hat.iter().map(|z| z.norm_sqr()).collect();

    let mut deriv: Vec<Complex64> = hat.iter().zip(&k).map(|(z, k)| z * Complex64::new(0.0, *k)).collect();
    spectral.inverse(&mut deriv);
    let p0 = psi.iter().zip(&deriv).map(|(z, d)| (z.conj() * d).im).sum::<f64>() * dx;

    let (_, kvar) = spectral_moments(k.iter().copied().zip(power.iter().copied()));
    Ok(DescriptorVector(vec![e0, a_max, xc, var, p0, kvar.sqrt()]))
}

pub fn descriptors_2d(field: &ComplexField) -> Result<DescriptorVector> {
    let grid = *field.grid();
    if grid.dim() != 2 {
        return Err(Error::Shape("descriptors_2d needs a 2D field".into()));
    }
    let e0 = check_mass(field)?;
    let dv = grid.cell_volume();
    let ny = grid.y().n;
    let psi = field.data();
    let dens: Vec<f64> = psi.iter().map(|z| z.norm_sqr()).collect();
    let (xs, ys) = (grid.x().coords(), grid.y().coords());
    let at = |i: usize| (xs[i / ny], ys[i % ny]);

    let a_max = field.max_abs();
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, d) in dens.iter().enumerate() {
        let (x, y) = at(i);
        sx += x * d;
        sy += y * d;
    }
    let (xc, yc) = (sx * dv / e0, sy * dv / e0);
    let (mut vx, mut vy) = (0.0, 0.0);
    for (i, d) in dens.iter().enumerate() {
        let (x, y) = at(i);
        vx += (x - xc) * (x - xc) * d;
        vy += (y - yc) * (y - yc) * d;
    }
    let (vx, vy) = (vx * dv / e0, vy * dv / e0);

    let ks = grid.wavenumbers();
    let mut hat = psi.to_vec();
    Spectral::new(&grid).forward(&mut hat);
    let power: Vec<f64> = hat.iter().map(|z| z.norm_sqr()).collect();
    let kx_w = || power.iter().enumerate().map(|(i, &w)| (ks[0][i / ny], w));
    let ky_w = || power.iter().enumerate().map(|(i, &w)| (ks[1][i % ny], w));
    let (px, kvx) = spectral_moments(kx_w());
    let (py, kvy) = spectral_moments(ky_w());

    Ok(DescriptorVector(vec![
        e0,
        a_max,
        xc,
        yc,
        vx,
        vy,
        px,
        py,
        kvx.sqrt(),
        kvy.sqrt(),
    ]))
}

/// Dispatches on the field dimensionality.
pub fn descriptors(field: &ComplexField) -> Result<DescriptorVector> {
    match field.grid().dim() {
        1 => descriptors_1d(field),
        _ => descriptors_2d(field),
    }
}

/// Raw descriptors of every initial condition in a split.
pub fn dataset_descriptors(ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    ds.trajectories
        .iter()
        .map(|t| descriptors(t.initial()).map(|d| d.0))
        .collect()
}

/// Per-dimension `(φ - μ) / σ` with training statistics.
pub fn standardize(phi: &DescriptorVector, stats: &NormStats) -> Vec<f64> {
    stats.standardize(&phi.0)
}

pub fn unstandardize(phi_std: &[f64], stats: &NormStats) -> DescriptorVector {
    DescriptorVector(stats.unstandardize(phi_std))
}
