use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::Benchmark;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vanilla,
    Concat,
    Film,
    Rg,
    Mhrg,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Vanilla,
        Variant::Concat,
        Variant::Film,
        Variant::Rg,
        Variant::Mhrg,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Vanilla => "Vanilla",
            Variant::Concat => "Concat",
            Variant::Film => "FiLM",
            Variant::Rg => "RG",
            Variant::Mhrg => "MH-RG",
        }
    }

    pub fn uses_descriptors(self) -> bool {
        self != Variant::Vanilla
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Vanilla => "vanilla",
            Variant::Concat => "concat",
            Variant::Film => "film",
            Variant::Rg => "rg",
            Variant::Mhrg => "mhrg",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "vanilla" => Ok(Variant::Vanilla),
            "concat" => Ok(Variant::Concat),
            "film" => Ok(Variant::Film),
            "rg" => Ok(Variant::Rg),
            "mhrg" => Ok(Variant::Mhrg),
            _ => Err(Error::Config(format!("unknown variant `{s}`"))),
        }
    }
}

/// Input-side modulator `h_pre(φ)` producing one factor per sensor entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreBranch {
    /// MLP `(N_f, hidden, sensor_dim)`.
    Dense { hidden: usize },
    /// MLP `(N_f, hidden, rank)` followed by a bias-free `rank → sensor_dim` map.
    LowRank { hidden: usize, rank: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// `2 N` for `N` grid points.
    pub sensor_dim: usize,
    /// 2 for `(x, t)`, 3 for `(x, y, t)`.
    pub coord_dim: usize,
    pub n_descriptors: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    /// Latent width `p`.
    pub latent: usize,
    pub out_channels: usize,
    pub film_hidden: usize,
    pub pre: PreBranch,
    pub gate_hidden: usize,
    pub alpha_pre: f64,
    pub alpha_b: f64,
    pub alpha_t: f64,
    pub heads: usize,
    pub gate_rank: usize,
    pub head_hidden: usize,
}

impl ModelConfig {
    /// Reference 1D architecture: branch `(256, 512, 512, 512, 256)`, trunk
    /// `(2, 512, 512, 512, 256)`, `p = 256`, 18 heads.
    pub fn nlse_1d(variant: Variant) -> Self {
        Self {
            variant,
            sensor_dim: 256,
            coord_dim: 2,
            n_descriptors: 6,
            branch_hidden: vec![512; 3],
            trunk_hidden: vec![512; 3],
            latent: 256,
            out_channels: 2,
            film_hidden: 128,
            pre: PreBranch::Dense { hidden: 16 },
            gate_hidden: 256,
            alpha_pre: 1.0,
            alpha_b: 0.5,
            alpha_t: 0.5,
            heads: 18,
            gate_rank: 8,
            head_hidden: 32,
        }
    }

    /// Reference 2D architecture: branch `(32768, 256, 256, 256, 128)`,
    /// trunk `(3, 256, 256, 256, 128)`, low-rank pre-branch, 16 heads.
    pub fn gpe_2d(variant: Variant) -> Self {
        Self {
            variant,
            sensor_dim: 2 * 128 * 128,
            coord_dim: 3,
            n_descriptors: 10,
            branch_hidden: vec![256; 3],
            trunk_hidden: vec![256; 3],
            latent: 128,
            out_channels: 2,
            film_hidden: 128,
            pre: PreBranch::LowRank { hidden: 16, rank: 3 },
            gate_hidden: 128,
            alpha_pre: 1.0,
            alpha_b: 0.5,
            alpha_t: 0.5,
            heads: 16,
            gate_rank: 16,
            head_hidden: 64,
        }
    }

    pub fn preset(benchmark: Benchmark, variant: Variant) -> Self {
        match benchmark {
            Benchmark::Nlse1d => Self::nlse_1d(variant),
            Benchmark::Gpe2d => Self::gpe_2d(variant),
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sensor_dim == 0 || self.coord_dim == 0 || self.latent == 0 || self.out_channels == 0 {
            return bad("model widths must be positive".into());
        }
        if self.branch_hidden.contains(&0) || self.trunk_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.variant.uses_descriptors() && self.variant != Variant::Concat && self.n_descriptors == 0 {
            return bad(format!("{} needs at least one descriptor", self.variant.label()));
        }
        match self.variant {
            Variant::Film => {
                if self.branch_hidden.is_empty() || self.film_hidden == 0 {
                    return bad("FiLM needs hidden branch layers and a generator width".into());
                }
            }
            Variant::Rg | Variant::Mhrg => {
                let pre_ok = match self.pre {
                    PreBranch::Dense { hidden } => hidden > 0,
                    PreBranch::LowRank { hidden, rank } => hidden > 0 && rank > 0,
                };
                if !pre_ok {
                    return bad("pre-branch widths must be positive".into());
                }
                for a in [self.alpha_pre, self.alpha_b, self.alpha_t] {
                    if !(a.is_finite() && a >= 0.0) {
                        return bad(format!("gate amplitude {a} must be finite and >= 0"));
                    }
                }
                if self.variant == Variant::Rg && self.gate_hidden == 0 {
                    return bad("gate hidden width must be positive".into());
                }
                if self.variant == Variant::Mhrg {
                    if self.heads == 0 {
                        return bad("MH-RG needs at least one head".into());
                    }
                    if self.gate_rank == 0 || self.gate_rank > self.latent || self.head_hidden == 0 {
                        return bad(format!(
                            "gate rank {} must lie in 1..={} with positive head width",
                            self.gate_rank, self.latent
                        ));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn branch_input(&self) -> usize {
        if self.variant == Variant::Concat {
            self.sensor_dim + self.n_descriptors
        } else {
            self.sensor_dim
        }
    }

    pub fn branch_widths(&self) -> Vec<usize> {
        let mut w = vec![self.branch_input()];
        w.extend(&self.branch_hidden);
        w.push(self.latent);
        w
    }

    pub fn trunk_widths(&self) -> Vec<usize> {
        let mut w = vec![self.coord_dim];
        w.extend(&self.trunk_hidden);
        w.push(self.latent);
        w
    }
}

fn mlp_count(widths: &[usize], bias: bool) -> usize {
    widths
        .windows(2)
        .map(|w| w[0] * w[1] + if bias { w[1] } else { 0 })
        .sum()
}

/// Exact scalar count from the layer widths alone.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let nf = cfg.n_descriptors;
    let p = cfg.latent;
    let q = cfg.out_channels;
    let backbone = mlp_count(&cfg.branch_widths(), true) + mlp_count(&cfg.trunk_widths(), true);
    let readout = p * q + q;
    let pre = match cfg.pre {
        PreBranch::Dense { hidden } => mlp_count(&[nf, hidden, cfg.sensor_dim], true),
        PreBranch::LowRank { hidden, rank } => mlp_count(&[nf, hidden, rank], true) + rank * cfg.sensor_dim,
    };
    match cfg.variant {
        Variant::Vanilla | Variant::Concat => backbone + readout,
        Variant::Film => {
            let gens: usize = cfg
                .branch_hidden
                .iter()
                .map(|&w| mlp_count(&[nf, cfg.film_hidden, 2 * w], true))
                .sum();
            backbone + readout + gens
        }
        Variant::Rg => backbone + readout + pre + 2 * mlp_count(&[nf, cfg.gate_hidden, p], true),
        Variant::Mhrg => {
            let per_head = 2 * mlp_count(&[nf, cfg.head_hidden, cfg.gate_rank], true) + p * q;
            backbone + pre + 2 * p * cfg.gate_rank + cfg.heads * per_head
        }
    }
}

/// Millions with three decimals, e.g. `1.447 M`.
pub fn format_millions(count: usize) -> String {
    format!("{:.3} M", count as f64 / 1e6)
}

#[cfg(test)]
mod tests {
    use super::*;

    // independent hand summation for the 1D vanilla backbone
    fn vanilla_1d_by_hand() -> usize {
        let branch = 256 * 512 + 512 + 2 * (512 * 512 + 512) + 512 * 256 + 256;
        let trunk = 2 * 512 + 512 + 2 * (512 * 512 + 512) + 512 * 256 + 256;
        branch + trunk + 256 * 2 + 2
    }

    #[test]
    fn reference_counts_1d() {
        assert_eq!(vanilla_1d_by_hand(), 1_446_914);
        let count = |v| param_count(&ModelConfig::nlse_1d(v));
        assert_eq!(count(Variant::Vanilla), 1_446_914);
        assert_eq!(count(Variant::Concat), 1_449_986);
        assert_eq!(count(Variant::Film), 1_845_890);
        assert_eq!(count(Variant::Rg), 1_586_546);
        assert_eq!(param_count(&ModelConfig::nlse_1d(Variant::Mhrg)), 1_481_744);
        assert_eq!(format_millions(1_446_914), "1.447 M");
        assert_eq!(format_millions(1_481_744), "1.482 M");
    }

    #[test]
    fn mhrg_head_slope_1d() {
        let c = |r| param_count(&ModelConfig::nlse_1d(Variant::Mhrg).with_heads(r));
        for (r, m) in [(6, "1.464 M"), (12, "1.473 M"), (18, "1.482 M"), (24, "1.491 M")] {
            assert_eq!(format_millions(c(r)), m);
        }
        assert_eq!(c(7) - c(6), 1488);
    }

    #[test]
    fn reference_counts_2d() {
        let count = |v| param_count(&ModelConfig::gpe_2d(v));
        assert_eq!(count(Variant::Vanilla), 8_719_106);
        assert_eq!(count(Variant::Concat), 8_721_666);
        assert_eq!(count(Variant::Film), 8_921_474);
        assert_eq!(count(Variant::Rg), 8_853_477);
        assert!((count(Variant::Rg) as f64 - 8.854e6).abs() / 8.854e6 < 1e-4);
        for (r, reported) in [(2, 8.829e6), (4, 8.837e6), (8, 8.852e6), (16, 8.882e6)] {
            let n = param_count(&ModelConfig::gpe_2d(Variant::Mhrg).with_heads(r)) as f64;
            assert!((n - reported).abs() / reported < 0.01, "R = {r}: {n}");
        }
    }

    #[test]
    fn variant_parsing() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("MH-RG".parse::<Variant>().unwrap(), Variant::Mhrg);
        assert!("fno".parse::<Variant>().is_err());
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::nlse_1d(Variant::Mhrg).with_heads(0).validate().is_err());
        let mut c = ModelConfig::nlse_1d(Variant::Mhrg);
        c.gate_rank = 300;
        assert!(c.validate().is_err());
        for v in Variant::ALL {
            ModelConfig::nlse_1d(v).validate().unwrap();
            ModelConfig::gpe_2d(v).validate().unwrap();
        }
    }
}
