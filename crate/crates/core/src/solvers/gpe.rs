use num_complex::Complex64;

use super::BLOWUP_THRESHOLD;
use crate::error::{Error, Result};
use crate::fft::Spectral;
use crate::grid::{ComplexField, Grid, Trajectory};

/// Damped 2D Gross-Pitaevskii equation in an isotropic harmonic trap:
/// `i ψ_t = -½ Δψ + ½ Ω² r² ψ + g |ψ|² ψ - i γ ψ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GpeConfig {
    pub grid: Grid,
    pub g: f64,
    pub gamma: f64,
    pub omega: f64,
    pub t_final: f64,
    pub dt: f64,
    /// Store every `stride`-th step (plus t = 0).
    pub stride: usize,
    pub blowup: f64,
}

impl Default for GpeConfig {
    fn default() -> Self {
        Self {
            grid: Grid::gpe_benchmark(),
            g: 1.0,
            gamma: 0.05,
            omega: 1.5,
            t_final: 2.0,
            dt: 0.01,
            stride: 5,
            blowup: BLOWUP_THRESHOLD,
        }
    }
}

impl GpeConfig {
    fn validate(&self) -> Result<usize> {
        if self.grid.dim() != 2 {
            return Err(Error::Config("GPE needs a 2D grid".into()));
        }
        if !(self.g >= 0.0 && self.omega >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::Config("GPE needs g >= 0, omega >= 0, gamma >= 0".into()));
        }
        let steps = (self.t_final / self.dt).round();
        if steps < 1.0 || (steps * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::Config(format!(
                "dt = {} does not divide t_final = {}",
                self.dt, self.t_final
            )));
        }
        let steps = steps as usize;
        if self.stride == 0 || !steps.is_multiple_of(self.stride) {
            return Err(Error::Config(format!(
                "stride {} does not divide {steps} steps",
                self.stride
            )));
        }
        Ok(steps)
    }

    pub fn n_steps(&self) -> Result<usize> {
        self.validate()
    }

    pub fn frame_times(&self) -> Result<Vec<f64>> {
        let steps = self.validate()?;
        Ok((0..=steps / self.stride)
            .map(|i| (i * self.stride) as f64 * self.dt)
            .collect())
    }
}

/// Strang splitting with pointwise potential/interaction/damping half steps
/// (|ψ|² frozen at substep start) around a full spectral kinetic step.
pub fn solve_gpe_2d(ic: &ComplexField, cfg: &GpeConfig) -> Result<Trajectory> {
    let steps = cfg.validate()?;
    if *ic.grid() != cfg.grid {
        return Err(Error::Shape("GPE initial condition is not on the config grid".into()));
    }
    let grid = cfg.grid;
    let times = cfg.frame_times()?;
    let mut spectral = Spectral::new(&grid);

    let potential: Vec<f64> = (0..grid.len())
        .map(|i| {
            let [x, y] = grid.point(i);
            0.5 * cfg.omega * cfg.omega * (x * x + y * y)
        })
        .collect();
    let ks = grid.wavenumbers();
    let ny = grid.y().n;
    let kinetic: Vec<Complex64> = (0..grid.len())
        .map(|i| {
            let (kx, ky) = (ks[0][i / ny], ks[1][i % ny]);
            Complex64::from_polar(1.0, -0.5 * (kx * kx + ky * ky) * cfg.dt)
        })
        .collect();
    let half = 0.5 * cfg.dt;
    let decay = (-cfg.gamma * half).exp();

    let pointwise = |psi: &mut [Complex64]| {
        for (z, v) in psi.iter_mut().zip(&potential) {
            let phase = -(v + cfg.g * z.norm_sqr()) * half;
            let (s, c) = phase.sin_cos();
            *z *= Complex64::new(c * decay, s * decay);
        }
    };

    let mut psi = ic.data().to_vec();
    let mut frames = Vec::with_capacity(times.len());
    frames.push(ic.clone());
    for step in 1..=steps {
        pointwise(&mut psi);
        spectral.forward(&mut psi);
        for (z, k) in psi.iter_mut().zip(&kinetic) {
            *z *= k;
        }
        spectral.inverse(&mut psi);
        pointwise(&mut psi);
        if step % cfg.stride == 0 {
            let frame = ComplexField::from_raw(grid, psi.clone());
            let max_abs = frame.max_abs();
            if max_abs.is_nan() || max_abs > cfg.blowup {
                return Err(Error::BlowUp {
                    max_abs,
                    threshold: cfg.blowup,
                    time: step as f64 * cfg.dt,
                });
            }
            frames.push(frame);
        }
    }
    Trajectory::new(vec![], times, frames)
}
