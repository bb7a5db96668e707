//! Planned forward/inverse DFTs on a [`Grid`], 1D or 2D.
//!
//! Forward transforms are unnormalized; inverse transforms divide by the
//! number of points, so `inverse(forward(x)) == x` up to round-off.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

pub struct Spectral {
    grid: Grid,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Option<Arc<dyn Fft<f64>>>,
    inv_y: Option<Arc<dyn Fft<f64>>>,
    scratch: Vec<Complex64>,
    column: Vec<Complex64>,
}

impl Spectral {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let nx = grid.x().n;
        let (fwd_y, inv_y) = if grid.dim() == 2 {
            let ny = grid.y().n;
            (Some(planner.plan_fft_forward(ny)), Some(planner.plan_fft_inverse(ny)))
        } else {
            (None, None)
        };
        let fwd_x = planner.plan_fft_forward(nx);
        let inv_x = planner.plan_fft_inverse(nx);
        let scratch_len = [&fwd_x, &inv_x]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .chain(fwd_y.iter().chain(inv_y.iter()).map(|f| f.get_inplace_scratch_len()))
            .max()
            .unwrap_or(0);
        Self {
            grid: *grid,
            fwd_x,
            inv_x,
            fwd_y,
            inv_y,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            column: vec![Complex64::new(0.0, 0.0); nx],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.transform(data, false);
        let scale = 1.0 / data.len() as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }

    fn transform(&mut self, data: &mut [Complex64], forward: bool) {
        assert_eq!(data.len(), self.grid.len(), "FFT buffer does not match grid");
        let (fx, fy) = if forward {
            (&self.fwd_x, &self.fwd_y)
        } else {
            (&self.inv_x, &self.inv_y)
        };
        match fy {
            None => fx.process_with_scratch(data, &mut self.scratch),
            Some(fy) => {
                let nx = self.grid.x().n;
                let ny = self.grid.y().n;
                // contiguous rows along y
                for row in data.chunks_exact_mut(ny) {
                    fy.process_with_scratch(row, &mut self.scratch);
                }
                // strided columns along x
                for iy in 0..ny {
                    for ix in 0..nx {
                        self.column[ix] = data[ix * ny + iy];
                    }
                    fx.process_with_scratch(&mut self.column, &mut self.scratch);
                    for ix in 0..nx {
                        data[ix * ny + iy] = self.column[ix];
                    }
                }
            }
        }
    }
}
