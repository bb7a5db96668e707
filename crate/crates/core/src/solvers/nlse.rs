use num_complex::Complex64;

use super::BLOWUP_THRESHOLD;
use crate::error::{Error, Result};
use crate::fft::Spectral;
use crate::grid::{ComplexField, Grid, Trajectory};

/// Focusing cubic NLSE `i ψ_t + ½ ψ_xx + g |ψ|² ψ = 0` on a periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NlseConfig {
    pub grid: Grid,
    pub t_final: f64,
    pub n_frames: usize,
    /// Internal Strang substep.
    pub dt: f64,
    pub nonlinearity: f64,
    pub blowup: f64,
}

impl Default for NlseConfig {
    fn default() -> Self {
        Self {
            grid: Grid::nlse_benchmark(),
            t_final: 2.0,
            n_frames: 201,
            dt: 1e-3,
            nonlinearity: 1.0,
            blowup: BLOWUP_THRESHOLD,
        }
    }
}

impl NlseConfig {
    pub fn frame_times(&self) -> Vec<f64> {
        let last = (self.n_frames - 1) as f64;
        (0..self.n_frames)
            .map(|i| self.t_final * i as f64 / last)
            .collect()
    }

    /// Substeps between consecutive stored frames.
    pub fn substeps_per_frame(&self) -> Result<usize> {
        if self.n_frames < 2 || self.t_final <= 0.0 || self.dt <= 0.0 {
            return Err(Error::Config("NLSE needs n_frames >= 2, t_final > 0, dt > 0".into()));
        }
        let interval = self.t_final / (self.n_frames - 1) as f64;
        let k = (interval / self.dt).round();
        if k < 1.0 || (k * self.dt - interval).abs() > 1e-9 * interval {
            return Err(Error::Config(format!(
                "dt = {} does not divide the output interval {interval}",
                self.dt
            )));
        }
        Ok(k as usize)
    }
}

#[inline]
fn nonlinear_phase(psi: &mut [Complex64], coeff: f64) {
    for z in psi.iter_mut() {
        let (s, c) = (coeff * z.norm_sqr()).sin_cos();
        *z *= Complex64::new(c, s);
    }
}

/// Strang splitting: half nonlinear phase, full kinetic step in Fourier space,
/// half nonlinear phase.
pub fn solve_nlse_1d(ic: &ComplexField, cfg: &NlseConfig) -> Result<Trajectory> {
    if *ic.grid() != cfg.grid || cfg.grid.dim() != 1 {
        return Err(Error::Shape("NLSE initial condition is not on the 1D config grid".into()));
    }
    let substeps = cfg.substeps_per_frame()?;
    let times = cfg.frame_times();
    let mut spectral = Spectral::new(&cfg.grid);
    let kinetic: Vec<Complex64> = cfg.grid.x()
        .wavenumbers()
        .iter()
        .map(|k| Complex64::from_polar(1.0, -0.5 * k * k * cfg.dt))
        .collect();
    let half = 0.5 * cfg.dt * cfg.nonlinearity;

    let mut psi = ic.data().to_vec();
    let mut frames = Vec::with_capacity(cfg.n_frames);
    frames.push(ic.clone());
    for &t in &times[1..] {
        for _ in 0..substeps {
            nonlinear_phase(&mut psi, half);
            spectral.forward(&mut psi);
            for (z, k) in psi.iter_mut().zip(&kinetic) {
                *z *= k;
            }
            spectral.inverse(&mut psi);
            nonlinear_phase(&mut psi, half);
        }
        let frame = ComplexField::from_raw(cfg.grid, psi.clone());
        let max_abs = frame.max_abs();
        if max_abs.is_nan() || max_abs > cfg.blowup {
            return Err(Error::BlowUp {
                max_abs,
                threshold: cfg.blowup,
                time: t,
            });
        }
        frames.push(frame);
    }
    Trajectory::new(vec![], times, frames)
}
