//! Uniform periodic grids, complex fields on them, and the sensor layout
//! consumed by the branch network.
//!
//! Grids exclude the right endpoint: an axis `[min, max)` with `n` points has
//! spacing `(max - min) / n` and samples `min + i * dx` for `i in 0..n`.
//! Two-dimensional fields are stored row-major with `x` as the slow axis, so
//! sample `(ix, iy)` lives at `ix * ny + iy`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One periodic axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return Err(Error::InvalidGrid(format!("extent [{min}, {max}) is empty")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "point count {n} must be a power of two and at least 8"
            )));
        }
        Ok(Self { min, max, n })
    }

    pub fn length(&self) -> f64 {
        self.max - self.min
    }

    pub fn spacing(&self) -> f64 {
        self.length() / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    /// Angular wavenumbers in standard DFT order `0, 1, .., n/2-1, -n/2, .., -1`
    /// scaled by `2π / L`.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n as i64;
        let scale = 2.0 * PI / self.length();
        (0..n)
            .map(|m| {
                let signed = if m < n / 2 { m } else { m - n };
                scale * signed as f64
            })
            .collect()
    }

    /// Index of the sample closest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        let raw = ((x - self.min) / self.spacing()).round();
        (raw.max(0.0) as usize).min(self.n - 1)
    }
}

/// A uniform 1D or 2D periodic grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    axes: [Axis; 2],
}

impl Grid {
    pub fn new_1d(x: Axis) -> Self {
        Self { dim: 1, axes: [x, x] }
    }

    pub fn new_2d(x: Axis, y: Axis) -> Self {
        Self { dim: 2, axes: [x, y] }
    }

    /// `[-10, 10)` with 128 points.
    pub fn nlse_benchmark() -> Self {
        Self::new_1d(Axis::new(-10.0, 10.0, 128).expect("valid benchmark axis"))
    }

    /// `[-4, 4)²` with 128×128 points.
    pub fn gpe_benchmark() -> Self {
        let a = Axis::new(-4.0, 4.0, 128).expect("valid benchmark axis");
        Self::new_2d(a, a)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes[..self.dim]
    }

    pub fn x(&self) -> &Axis {
        &self.axes[0]
    }

    /// Second axis; only meaningful in 2D.
    pub fn y(&self) -> &Axis {
        &self.axes[1]
    }

    pub fn len(&self) -> usize {
        self.axes().iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of one cell (Δx, or Δx·Δy).
    pub fn cell_volume(&self) -> f64 {
        self.axes().iter().map(Axis::spacing).product()
    }

    /// Spatial coordinates of sample `index` (the `y` entry is zero in 1D).
    pub fn point(&self, index: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.axes[0].coord(index), 0.0]
        } else {
            let ny = self.axes[1].n;
            [self.axes[0].coord(index / ny), self.axes[1].coord(index % ny)]
        }
    }

    pub fn wavenumbers(&self) -> Vec<Vec<f64>> {
        self.axes().iter().map(Axis::wavenumbers).collect()
    }
}

/// Angular wavenumbers per axis in DFT order.
pub fn wavenumbers(grid: &Grid) -> Vec<Vec<f64>> {
    grid.wavenumbers()
}

/// Complex samples of ψ on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} samples, grid has {} points",
                data.len(),
                grid.len()
            )));
        }
        if data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("complex field".into()));
        }
        Ok(Self { grid, data })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        let data = (0..grid.len())
            .map(|i| {
                let [x, y] = grid.point(i);
                f(x, y)
            })
            .collect();
        Self::new(grid, data)
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub(crate) fn from_raw(grid: Grid, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(grid.len(), data.len());
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Σ|ψ|² times the cell volume.
    pub fn mass(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Real parts first, then imaginary parts, both in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorVector(pub Vec<f64>);

impl SensorVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn flatten_sensor(field: &ComplexField) -> Result<SensorVector> {
    if !field.is_finite() {
        return Err(Error::NonFinite("sensor field".into()));
    }
    let mut out = Vec::with_capacity(2 * field.len());
    out.extend(field.data().iter().map(|z| z.re));
    out.extend(field.data().iter().map(|z| z.im));
    Ok(SensorVector(out))
}

pub fn unflatten_sensor(sensor: &SensorVector, grid: Grid) -> Result<ComplexField> {
    let n = grid.len();
    if sensor.len() != 2 * n {
        return Err(Error::Shape(format!(
            "sensor length {} does not match 2 x {n}",
            sensor.len()
        )));
    }
    let (re, im) = sensor.0.split_at(n);
    let data = re
        .iter()
        .zip(im)
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect();
    ComplexField::new(grid, data)
}

/// An initial condition and its time-stamped solution frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Initial-condition parameters, kept for provenance.
    pub params: Vec<f64>,
    pub times: Vec<f64>,
    pub frames: Vec<ComplexField>,
}

impl Trajectory {
    pub fn new(params: Vec<f64>, times: Vec<f64>, frames: Vec<ComplexField>) -> Result<Self> {
        if times.len() != frames.len() || frames.is_empty() {
            return Err(Error::Shape(format!(
                "{} times for {} frames",
                times.len(),
                frames.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::Shape("first frame must be at t = 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Shape("frame times must be strictly increasing".into()));
        }
        let grid = *frames[0].grid();
        if frames.iter().any(|f| *f.grid() != grid) {
            return Err(Error::Shape("frames live on different grids".into()));
        }
        Ok(Self {
            params,
            times,
            frames,
        })
    }

    pub fn initial(&self) -> &ComplexField {
        &self.frames[0]
    }

    pub fn grid(&self) -> &Grid {
        self.frames[0].grid()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// A split of trajectories sharing one grid and one set of frame times.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(grid: Grid, times: Vec<f64>, trajectories: Vec<Trajectory>) -> Result<Self> {
        for (i, t) in trajectories.iter().enumerate() {
            if *t.grid() != grid || t.times != times {
                return Err(Error::Shape(format!(
                    "trajectory {i} does not share the dataset grid and frame times"
                )));
            }
        }
        Ok(Self {
            grid,
            times,
            trajectories,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_frames(&self) -> usize {
        self.times.len()
    }

    /// Spatial dims plus time.
    pub fn coord_dim(&self) -> usize {
        self.grid.dim() + 1
    }

    /// Coordinates `(x, t)` or `(x, y, t)` of the flat space-time index
    /// `frame * grid.len() + point`.
    pub fn query_coords(&self, flat: usize) -> Vec<f64> {
        let n = self.grid.len();
        let (frame, point) = (flat / n, flat % n);
        let p = self.grid.point(point);
        let mut c = p[..self.grid.dim()].to_vec();
        c.push(self.times[frame]);
        c
    }

    pub fn n_space_time(&self) -> usize {
        self.grid.len() * self.n_frames()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavenumbers_unit_circumference() {
        let a = Axis::new(0.0, 2.0 * PI, 8).unwrap();
        let k = a.wavenumbers();
        let expected = [0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0];
        for (got, want) in k.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn benchmark_fundamental_wavenumber() {
        let g = Grid::nlse_benchmark();
        let k = &wavenumbers(&g)[0];
        assert_eq!(k[0], 0.0);
        assert!((k[1] - 2.0 * PI / 20.0).abs() < 1e-15);
        assert!((k[1] - 0.31416).abs() < 1e-5);
        let g2 = Grid::gpe_benchmark();
        assert!(wavenumbers(&g2).iter().all(|k| k[0] == 0.0));
    }

    #[test]
    fn axis_rejects_bad_counts() {
        assert!(Axis::new(0.0, 1.0, 6).is_err());
        assert!(Axis::new(0.0, 1.0, 12).is_err());
        assert!(Axis::new(1.0, 1.0, 16).is_err());
    }

    #[test]
    fn flatten_two_point_case() {
        // Flattening itself does not care about the grid size; use an 8-point
        // grid and check the first two samples.
        let g = Grid::new_1d(Axis::new(0.0, 1.0, 8).unwrap());
        let mut data = vec![Complex64::new(0.0, 0.0); 8];
        data[0] = Complex64::new(1.0, 2.0);
        data[1] = Complex64::new(3.0, 4.0);
        let s = flatten_sensor(&ComplexField::new(g, data).unwrap()).unwrap();
        assert_eq!(&s.0[..2], &[1.0, 3.0]);
        assert_eq!(&s.0[8..10], &[2.0, 4.0]);
    }

    #[test]
    fn real_field_has_zero_imaginary_half() {
        let g = Grid::nlse_benchmark();
        let f = ComplexField::from_fn(g, |x, _| Complex64::new((-x * x).exp(), 0.0)).unwrap();
        let s = flatten_sensor(&f).unwrap();
        assert!(s.0[g.len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_rejected() {
        let g = Grid::nlse_benchmark();
        let mut data = vec![Complex64::new(0.0, 0.0); g.len()];
        data[3] = Complex64::new(f64::NAN, 0.0);
        assert!(ComplexField::new(g, data).is_err());
    }

    #[test]
    fn two_d_point_layout_is_x_major() {
        let g = Grid::new_2d(Axis::new(0.0, 8.0, 8).unwrap(), Axis::new(0.0, 16.0, 16).unwrap());
        assert_eq!(g.point(0), [0.0, 0.0]);
        assert_eq!(g.point(1), [0.0, 1.0]);
        assert_eq!(g.point(16), [1.0, 0.0]);
        assert_eq!(g.len(), 128);
    }

    #[test]
    fn nearest_index_of_origin() {
        let g = Grid::nlse_benchmark();
        let i = g.x().nearest_index(0.0);
        assert_eq!(i, 64);
        assert_eq!(g.x().coord(i), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sensor_round_trip(values in proptest::collection::vec(-1e3f64..1e3, 32)) {
                let g = Grid::new_1d(Axis::new(-1.0, 1.0, 16).unwrap());
                let data: Vec<_> = values.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
                let f = ComplexField::new(g, data).unwrap();
                let back = unflatten_sensor(&flatten_sensor(&f).unwrap(), g).unwrap();
                prop_assert_eq!(back, f);
            }
        }
    }
}
