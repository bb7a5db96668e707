//! Versioned binary checkpoints: named parameter slabs, Adam moments, step
//! counter, normalisation statistics and an echo of the run configuration.
//!
//! Layout (little endian): magic `WGCK1`, `u64` step, `u32` slab count, then
//! per slab the UTF-8 name (`u32` length + bytes), `u32` rows, `u32` cols and
//! three `f64` blocks (value, first moment, second moment). Afterwards the
//! Adam hyperparameters (`f64` β1, β2, ε, clip or NaN), `u64` Adam step, and
//! two length-prefixed UTF-8 blocks: the normalisation statistics as TOML and
//! the config echo.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::autodiff::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::norm::NormStats;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"WGCK1";

#[derive(Clone, Debug, PartialEq)]
pub struct Slab {
    pub name: String,
    pub value: Array2<f64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub slabs: Vec<Slab>,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub stats: NormStats,
    /// Full run configuration (TOML) used to rebuild the model.
    pub config: String,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct StatsDoc {
    stats: NormStats,
}

impl Checkpoint {
    pub fn capture(model: &Model, adam: &Adam, step: u64, stats: &NormStats, config: &str) -> Self {
        let slabs = model
            .store()
            .iter()
            .zip(adam.m.iter().zip(&adam.v))
            .map(|((name, value), (m, v))| Slab {
                name: name.to_string(),
                value: value.clone(),
                m: m.clone(),
                v: v.clone(),
            })
            .collect();
        Self {
            step,
            slabs,
            adam: adam.config,
            adam_step: adam.step,
            stats: stats.clone(),
            config: config.to_string(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.slabs.len() as u32).to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        for slab in &self.slabs {
            put_str(&mut out, &slab.name);
            let (r, c) = slab.value.dim();
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
            for a in [&slab.value, &slab.m, &slab.v] {
                for x in a.iter() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let clip = self.adam.clip.unwrap_or(f64::NAN);
        for x in [self.adam.beta1, self.adam.beta2, self.adam.eps, clip] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        let stats = toml::to_string(&StatsDoc {
            stats: self.stats.clone(),
        })
        .map_err(|e| Error::Config(format!("serialising statistics: {e}")))?;
        put_str(&mut out, &stats);
        put_str(&mut out, &self.config);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(file);
            w.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            w.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(5)? != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", path, "bad magic"));
        }
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let mut slabs = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut block = || -> Result<Array2<f64>> {
                let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Ok(Array2::from_shape_vec((rows, cols), data).expect("sized"))
            };
            let value = block()?;
            let m = block()?;
            let v = block()?;
            slabs.push(Slab { name, value, m, v });
        }
        let (beta1, beta2, eps, clip) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let adam_step = r.u64()?;
        let stats_text = r.string()?;
        let config = r.string()?;
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", path, "trailing bytes"));
        }
        let stats = toml::from_str::<StatsDoc>(&stats_text)
            .map_err(|e| Error::format("checkpoint", path, format!("statistics: {e}")))?
            .stats;
        Ok(Self {
            step,
            slabs,
            adam: AdamConfig {
                beta1,
                beta2,
                eps,
                clip: (!clip.is_nan()).then_some(clip),
            },
            adam_step,
            stats,
            config,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Rebuilds the model for `cfg` and installs the stored slabs.
    pub fn restore_model(&self, cfg: &ModelConfig) -> Result<Model> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Model::new(cfg.clone(), &mut rng)?;
        let named: Vec<(String, Array2<f64>)> = self
            .slabs
            .iter()
            .map(|s| (s.name.clone(), s.value.clone()))
            .collect();
        model.load_params(&named)?;
        Ok(model)
    }

    pub fn restore_adam(&self, model: &Model) -> Result<Adam> {
        let mut adam = Adam::new(model.store(), self.adam);
        for (i, slab) in self.slabs.iter().enumerate() {
            if model.store().name(crate::autodiff::ParamId::from_index(i)) != slab.name {
                return Err(Error::Shape(format!("slab order differs at `{}`", slab.name)));
            }
            adam.m[i].assign(&slab.m);
            adam.v[i].assign(&slab.v);
        }
        adam.step = self.adam_step;
        Ok(adam)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("checkpoint", self.path, "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let path = self.path;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("checkpoint", path, "invalid UTF-8"))
    }
}
