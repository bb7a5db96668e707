//! Binary dataset container (`WGDS1`, little-endian).
//!
//! Layout:
//!
//! ```text
//! "WGDS1"
//! u8   dimensionality (1 or 2)
//! f64  min, f64 max            per axis
//! u32  point count             per axis
//! u32  frame count, then f64 frame times
//! u32  trajectory count
//! u8   precision tag (0 = f64, 1 = f32)
//! u32  IC parameter record length
//! per trajectory: f64 IC parameters, then (re, im) for every frame and point
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Axis, ComplexField, Dataset, Grid, Trajectory};

pub const DATASET_MAGIC: &[u8; 5] = b"WGDS1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Precision::F64 => 0,
            Precision::F32 => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Precision::F64),
            1 => Some(Precision::F32),
            _ => None,
        }
    }
}

/// Streams trajectories to disk one at a time.
pub struct DatasetWriter {
    path: PathBuf,
    out: BufWriter<File>,
    grid: Grid,
    times: Vec<f64>,
    precision: Precision,
    param_len: usize,
    expected: usize,
    written: usize,
}

impl DatasetWriter {
    pub fn create(
        path: &Path,
        grid: Grid,
        times: &[f64],
        count: usize,
        precision: Precision,
        param_len: usize,
    ) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            grid,
            times: times.to_vec(),
            precision,
            param_len,
            expected: count,
            written: 0,
        };
        w.header()?;
        Ok(w)
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.out.write_all(bytes).map_err(|e| Error::io(&self.path, e))
    }

    fn header(&mut self) -> Result<()> {
        let grid = self.grid;
        self.put(DATASET_MAGIC)?;
        self.put(&[grid.dim() as u8])?;
        for a in grid.axes() {
            self.put(&a.min.to_le_bytes())?;
            self.put(&a.max.to_le_bytes())?;
        }
        for a in grid.axes() {
            self.put(&(a.n as u32).to_le_bytes())?;
        }
        self.put(&(self.times.len() as u32).to_le_bytes())?;
        for t in self.times.clone() {
            self.put(&t.to_le_bytes())?;
        }
        self.put(&(self.expected as u32).to_le_bytes())?;
        self.put(&[self.precision.tag()])?;
        self.put(&(self.param_len as u32).to_le_bytes())
    }

    pub fn write_trajectory(&mut self, traj: &Trajectory) -> Result<()> {
        if traj.params.len() != self.param_len
            || traj.times != self.times
            || *traj.grid() != self.grid
        {
            return Err(Error::Shape(format!(
                "trajectory {} does not match the container header",
                self.written
            )));
        }
        if self.written == self.expected {
            return Err(Error::Shape("more trajectories than declared".into()));
        }
        let mut buf = Vec::with_capacity(traj.frames.len() * self.grid.len() * 16);
        for p in &traj.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        for frame in &traj.frames {
            for z in frame.data() {
                match self.precision {
                    Precision::F64 => {
                        buf.extend_from_slice(&z.re.to_le_bytes());
                        buf.extend_from_slice(&z.im.to_le_bytes());
                    }
                    Precision::F32 => {
                        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
                        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
                    }
                }
            }
        }
        self.put(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.expected {
            return Err(Error::Shape(format!(
                "declared {} trajectories, wrote {}",
                self.expected, self.written
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_dataset(path: &Path, ds: &Dataset, precision: Precision) -> Result<()> {
    let param_len = ds.trajectories.first().map_or(0, |t| t.params.len());
    let mut w = DatasetWriter::create(path, ds.grid, &ds.times, ds.len(), precision, param_len)?;
    for t in &ds.trajectories {
        w.write_trajectory(t)?;
    }
    w.finish()
}

struct Reader<'a> {
    path: &'a Path,
    inner: BufReader<File>,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::format("dataset", self.path, format!("truncated: {e}")))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.bytes()?) as f64)
    }
}

/// Header fields of a container, without the sample payload.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub count: usize,
    pub precision: Precision,
    pub param_len: usize,
}

fn read_header(r: &mut Reader<'_>) -> Result<DatasetHeader> {
    let path = r.path;
    let magic: [u8; 5] = r.bytes()?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format("dataset", path, "bad magic"));
    }
    let dim = r.u8()? as usize;
    if dim != 1 && dim != 2 {
        return Err(Error::format("dataset", path, format!("dimensionality {dim}")));
    }
    let mut ext = vec![];
    for _ in 0..dim {
        ext.push((r.f64()?, r.f64()?));
    }
    let mut axes = vec![];
    for &(lo, hi) in &ext {
        let n = r.u32()?;
        axes.push(Axis::new(lo, hi, n).map_err(|e| Error::format("dataset", path, e.to_string()))?);
    }
    let grid = if dim == 1 {
        Grid::new_1d(axes[0])
    } else {
        Grid::new_2d(axes[0], axes[1])
    };
    let n_frames = r.u32()?;
    let times = (0..n_frames).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()?;
    let precision = Precision::from_tag(r.u8()?)
        .ok_or_else(|| Error::format("dataset", path, "unknown precision tag"))?;
    let param_len = r.u32()?;
    Ok(DatasetHeader {
        grid,
        times,
        count,
        precision,
        param_len,
    })
}

pub fn read_dataset_header(path: &Path) -> Result<DatasetHeader> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        inner: BufReader::new(file),
    };
    read_header(&mut r)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        inner: BufReader::with_capacity(1 << 20, file),
    };
    let h = read_header(&mut r)?;
    let n = h.grid.len();
    let mut trajectories = Vec::with_capacity(h.count);
    for _ in 0..h.count {
        let params = (0..h.param_len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mut frames = Vec::with_capacity(h.times.len());
        for _ in 0..h.times.len() {
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let (re, im) = match h.precision {
                    Precision::F64 => (r.f64()?, r.f64()?),
                    Precision::F32 => (r.f32()?, r.f32()?),
                };
                data.push(Complex64::new(re, im));
            }
            frames.push(
                ComplexField::new(h.grid, data)
                    .map_err(|e| Error::format("dataset", path, e.to_string()))?,
            );
        }
        trajectories.push(
            Trajectory::new(params, h.times.clone(), frames)
                .map_err(|e| Error::format("dataset", path, e.to_string()))?,
        );
    }
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format("dataset", path, "trailing bytes"));
    }
    Dataset::new(h.grid, h.times, trajectories)
}
