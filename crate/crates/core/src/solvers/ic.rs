use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::grid::{ComplexField, Grid};

/// One modulated Gaussian packet `A exp(-(x-x0)²/(2w²)) e^{ikx}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Packet {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub wavenumber: f64,
}

impl Packet {
    pub fn eval(&self, x: f64) -> Complex64 {
        let d = x - self.center;
        let env = self.amplitude * (-(d * d) / (2.0 * self.width * self.width)).exp();
        Complex64::from_polar(env, self.wavenumber * x)
    }
}

/// Two-packet collision initial condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ic1dParams {
    pub packets: [Packet; 2],
}

impl Ic1dParams {
    pub const RECORD_LEN: usize = 8;

    /// `[A1, x1, w1, k1, A2, x2, w2, k2]`.
    pub fn to_record(&self) -> Vec<f64> {
        self.packets
            .iter()
            .flat_map(|p| [p.amplitude, p.center, p.width, p.wavenumber])
            .collect()
    }

    pub fn from_record(r: &[f64]) -> Option<Self> {
        if r.len() != Self::RECORD_LEN {
            return None;
        }
        let p = |o: usize| Packet {
            amplitude: r[o],
            center: r[o + 1],
            width: r[o + 2],
            wavenumber: r[o + 3],
        };
        Some(Self {
            packets: [p(0), p(4)],
        })
    }

    pub fn field(&self, grid: &Grid) -> ComplexField {
        ComplexField::from_fn(*grid, |x, _| self.packets[0].eval(x) + self.packets[1].eval(x))
            .expect("finite packet superposition")
    }
}

/// Sampling boxes for the 1D collision family. Packet 1 starts on the left
/// moving right, packet 2 on the right moving left.
#[derive(Clone, Debug, PartialEq)]
pub struct Ic1dBoxes {
    pub amplitude: (f64, f64),
    pub width: (f64, f64),
    pub center_left: (f64, f64),
    pub center_right: (f64, f64),
    pub k_right_moving: (f64, f64),
    pub k_left_moving: (f64, f64),
}

impl Default for Ic1dBoxes {
    fn default() -> Self {
        Self {
            amplitude: (0.8, 1.4),
            width: (0.6, 1.2),
            center_left: (-5.0, -2.0),
            center_right: (2.0, 5.0),
            k_right_moving: (0.8, 2.2),
            k_left_moving: (-2.2, -0.8),
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

pub fn sample_ic_1d(rng: &mut impl Rng, boxes: &Ic1dBoxes, grid: &Grid) -> (Ic1dParams, ComplexField) {
    let mut packet = |center, k| Packet {
        amplitude: uniform(rng, boxes.amplitude),
        width: uniform(rng, boxes.width),
        center: uniform(rng, center),
        wavenumber: uniform(rng, k),
    };
    let left = packet(boxes.center_left, boxes.k_right_moving);
    let right = packet(boxes.center_right, boxes.k_left_moving);
    let params = Ic1dParams {
        packets: [left, right],
    };
    let field = params.field(grid);
    (params, field)
}

/// Shifted, phase-tilted Gaussian condensate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ic2dParams {
    pub amplitude: f64,
    pub sigma: f64,
    pub phase: f64,
    pub x0: f64,
    pub y0: f64,
    pub kx: f64,
    pub ky: f64,
}

/// Closed sampling intervals except the phase, which is `[0, 2π)`.
pub struct Ic2dBoxes {
    pub amplitude: (f64, f64),
    pub sigma: (f64, f64),
    pub phase: (f64, f64),
    pub shift: (f64, f64),
    pub tilt: (f64, f64),
}

pub const IC_2D_BOXES: Ic2dBoxes = Ic2dBoxes {
    amplitude: (1.0, 1.5),
    sigma: (0.8, 1.3),
    phase: (0.0, 2.0 * PI),
    shift: (-0.8, 0.8),
    tilt: (-0.8, 0.8),
};

impl Ic2dParams {
    pub const RECORD_LEN: usize = 7;

    /// `[A, σ, φ0, x0, y0, kx, ky]`.
    pub fn to_record(&self) -> Vec<f64> {
        vec![
            self.amplitude,
            self.sigma,
            self.phase,
            self.x0,
            self.y0,
            self.kx,
            self.ky,
        ]
    }

    pub fn from_record(r: &[f64]) -> Option<Self> {
        (r.len() == Self::RECORD_LEN).then(|| Self {
            amplitude: r[0],
            sigma: r[1],
            phase: r[2],
            x0: r[3],
            y0: r[4],
            kx: r[5],
            ky: r[6],
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> Complex64 {
        let (dx, dy) = (x - self.x0, y - self.y0);
        let env = self.amplitude * (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp();
        Complex64::from_polar(env, self.kx * x + self.ky * y + self.phase)
    }

    pub fn field(&self, grid: &Grid) -> ComplexField {
        ComplexField::from_fn(*grid, |x, y| self.eval(x, y)).expect("finite Gaussian")
    }
}

pub fn sample_ic_2d(rng: &mut impl Rng, grid: &Grid) -> (Ic2dParams, ComplexField) {
    let b = &IC_2D_BOXES;
    let params = Ic2dParams {
        amplitude: uniform(rng, b.amplitude),
        sigma: uniform(rng, b.sigma),
        phase: rng.random_range(b.phase.0..b.phase.1),
        x0: uniform(rng, b.shift),
        y0: uniform(rng, b.shift),
        kx: uniform(rng, b.tilt),
        ky: uniform(rng, b.tilt),
    };
    let field = params.field(grid);
    (params, field)
}
