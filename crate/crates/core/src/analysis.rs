//! Mechanistic analysis of trained MH-RG models.

use nalgebra::DMatrix;
use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::evaluation::{all_coords, EvalInputs, QUERY_CHUNK, TRAJ_CHUNK};
use crate::grid::Dataset;
use crate::models::{Inputs, Model, QueryLayout, Variant};
use crate::norm::{ComplexStats, NormStats};

pub const SENSITIVITY_DELTA: f64 = 0.01;
/// Upper bound on the fixed query subset used by the sensitivity scan.
pub const SENSITIVITY_QUERIES: usize = 1024;

fn require_mhrg(model: &Model) -> Result<()> {
    if model.config().variant != Variant::Mhrg {
        return Err(Error::Unsupported(format!(
            "head analysis needs an MH-RG model, got {}",
            model.config().variant.label()
        )));
    }
    Ok(())
}

/// Per-head normalised components on every `(t, x)` of one trajectory.
///
/// `denormalize(Σ heads)` is the predicted field; the affine `output`
/// belongs to the sum, not to any single head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadFields {
    /// `heads[r]` is `N_t·N_x × 2` (Re, Im), rows in frame-major order.
    pub heads: Vec<Array2<f64>>,
    pub prediction: Array2<f64>,
    pub output: ComplexStats,
}

impl HeadFields {
    pub fn sum(&self) -> Array2<f64> {
        let mut acc = Array2::zeros(self.prediction.dim());
        for h in &self.heads {
            acc += h;
        }
        acc
    }
}

fn heads_at(model: &Model, inputs: &EvalInputs, coords: &Array2<f64>) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
    let b = inputs.len();
    let nq = coords.nrows();
    let q = model.config().out_channels;
    let r = model.n_heads();
    let mut heads = vec![Array2::zeros((b * nq, q)); r];
    let mut full = Array2::zeros((b * nq, q));
    for start in (0..nq).step_by(QUERY_CHUNK) {
        let end = (start + QUERY_CHUNK).min(nq);
        let x = Inputs {
            sensor: inputs.sensor.clone(),
            phi: inputs.phi.clone(),
            queries: coords.slice(s![start..end, ..]).to_owned(),
            layout: QueryLayout::Shared,
        };
        let hs = model.predict_heads(&x)?;
        let y = model.predict(&x)?;
        let m = end - start;
        for i in 0..b {
            let dst = s![i * nq + start..i * nq + end, ..];
            let src = s![i * m..(i + 1) * m, ..];
            for (acc, h) in heads.iter_mut().zip(&hs) {
                acc.slice_mut(dst).assign(&h.slice(src));
            }
            full.slice_mut(dst).assign(&y.slice(src));
        }
    }
    Ok((heads, full))
}

/// Head decomposition for trajectory `index` of `ds`.
pub fn head_fields(
    model: &Model,
    stats: &NormStats,
    ds: &Dataset,
    inputs: &EvalInputs,
    index: usize,
) -> Result<HeadFields> {
    require_mhrg(model)?;
    if index >= ds.len() || index >= inputs.len() {
        return Err(Error::Shape(format!("sample {index} out of range ({} trajectories)", ds.len())));
    }
    let (heads, prediction) = heads_at(model, &inputs.rows(index, index + 1), &all_coords(ds))?;
    Ok(HeadFields {
        heads,
        prediction,
        output: stats.output,
    })
}

/// Pearson correlation between heads flattened as `Re ‖ Im`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadCorrelation {
    pub matrix: Array2<f64>,
    /// Heads with zero variance; their rows and columns are reported as 0.
    pub constant: Vec<bool>,
}

pub fn head_correlation(heads: &[Array2<f64>]) -> Result<HeadCorrelation> {
    if heads.is_empty() {
        return Err(Error::Shape("no heads".into()));
    }
    let n = heads[0].len();
    if heads.iter().any(|h| h.len() != n) || n == 0 {
        return Err(Error::Shape("heads differ in size".into()));
    }
    let flat: Vec<Vec<f64>> = heads
        .iter()
        .map(|h| h.column(0).iter().chain(h.column(1).iter()).copied().collect())
        .collect();
    let centred: Vec<Vec<f64>> = flat
        .iter()
        .map(|v| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| x - m).collect()
        })
        .collect();
    let norms: Vec<f64> = centred.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let constant: Vec<bool> = norms.iter().map(|&s| s == 0.0).collect();
    let r = heads.len();
    let mut matrix = Array2::zeros((r, r));
    for a in 0..r {
        for b in a..r {
            let c = if constant[a] || constant[b] {
                0.0
            } else if a == b {
                1.0
            } else {
                let dot: f64 = centred[a].iter().zip(&centred[b]).map(|(x, y)| x * y).sum();
                (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0)
            };
            matrix[[a, b]] = c;
            matrix[[b, a]] = c;
        }
    }
    Ok(HeadCorrelation { matrix, constant })
}

/// `MSE(without head r) − MSE(full)` on the raw-space test split.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadAblation {
    pub full_mse: f64,
    pub delta: Vec<f64>,
}

pub fn head_ablation(model: &Model, stats: &NormStats, ds: &Dataset, inputs: &EvalInputs) -> Result<HeadAblation> {
    require_mhrg(model)?;
    if inputs.len() != ds.len() || ds.is_empty() {
        return Err(Error::Shape(format!("{} input rows for {} trajectories", inputs.len(), ds.len())));
    }
    let coords = all_coords(ds);
    let nq = coords.nrows();
    let n = ds.grid.len();
    let r = model.n_heads();
    let mut full_sum = 0.0;
    let mut sums = vec![0.0; r];
    for a in (0..ds.len()).step_by(TRAJ_CHUNK) {
        let b = (a + TRAJ_CHUNK).min(ds.len());
        let (heads, full) = heads_at(model, &inputs.rows(a, b), &coords)?;
        let mut traj_full = 0.0;
        let mut traj = vec![0.0; r];
        for t in a..b {
            let base = (t - a) * nq;
            let (mut f_acc, mut h_acc) = (0.0, vec![0.0; r]);
            for (f, frame) in ds.trajectories[t].frames.iter().enumerate() {
                for (p, z) in frame.data().iter().enumerate() {
                    let row = base + f * n + p;
                    let y = [full[[row, 0]], full[[row, 1]]];
                    f_acc += (stats.output.denormalize(y) - z).norm_sqr();
                    for (k, h) in heads.iter().enumerate() {
                        let without = [y[0] - h[[row, 0]], y[1] - h[[row, 1]]];
                        h_acc[k] += (stats.output.denormalize(without) - z).norm_sqr();
                    }
                }
            }
            traj_full += f_acc / nq as f64;
            for k in 0..r {
                traj[k] += h_acc[k] / nq as f64;
            }
        }
        full_sum += traj_full;
        for k in 0..r {
            sums[k] += traj[k];
        }
    }
    let m = ds.len() as f64;
    let full_mse = full_sum / m;
    Ok(HeadAblation {
        full_mse,
        delta: sums.iter().map(|s| s / m - full_mse).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensitivityTarget {
    HeadOutput,
    BranchGate,
    TrunkGate,
}

impl SensitivityTarget {
    pub const ALL: [SensitivityTarget; 3] = [Self::HeadOutput, Self::BranchGate, Self::TrunkGate];

    pub fn name(self) -> &'static str {
        match self {
            Self::HeadOutput => "head_output",
            Self::BranchGate => "branch_gate",
            Self::TrunkGate => "trunk_gate",
        }
    }
}

/// Evenly strided flat indices, at most `max` of them.
pub fn fixed_queries(ds: &Dataset, max: usize) -> Array2<f64> {
    let total = ds.n_space_time();
    let stride = total.div_ceil(max.max(1)).max(1);
    let flat: Vec<usize> = (0..total).step_by(stride).collect();
    crate::training::coords_of(ds, &flat)
}

fn per_head(model: &Model, x: &Inputs, target: SensitivityTarget) -> Result<Vec<Array2<f64>>> {
    Ok(match target {
        SensitivityTarget::HeadOutput => model.predict_heads(x)?,
        SensitivityTarget::BranchGate => model.gates(x)?.into_iter().map(|(b, _)| b).collect(),
        SensitivityTarget::TrunkGate => model.gates(x)?.into_iter().map(|(_, t)| t).collect(),
    })
}

/// `R × N_f` central-difference sensitivities in standardised descriptor
/// units: RMS over queries and channels (head output) or gate channels,
/// averaged over the rows of `inputs`.
pub fn descriptor_sensitivity(
    model: &Model,
    inputs: &EvalInputs,
    queries: &Array2<f64>,
    target: SensitivityTarget,
    delta: f64,
) -> Result<Array2<f64>> {
    require_mhrg(model)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!("sensitivity step must be positive, got {delta}")));
    }
    if inputs.is_empty() {
        return Err(Error::EmptySplit);
    }
    let b = inputs.len();
    let nf = inputs.phi.ncols();
    let r = model.n_heads();
    let mut out = Array2::zeros((r, nf));
    for i in 0..nf {
        let shifted = |sign: f64| -> Result<Vec<Array2<f64>>> {
            let mut phi = inputs.phi.clone();
            phi.column_mut(i).mapv_inplace(|v| v + sign * delta);
            let x = Inputs {
                sensor: inputs.sensor.clone(),
                phi,
                queries: queries.clone(),
                layout: QueryLayout::Shared,
            };
            per_head(model, &x, target)
        };
        let (plus, minus) = (shifted(1.0)?, shifted(-1.0)?);
        for k in 0..r {
            let d = (&plus[k] - &minus[k]) / (2.0 * delta);
            let rows = d.nrows() / b;
            let mut acc = 0.0;
            for j in 0..b {
                let block = d.slice(s![j * rows..(j + 1) * rows, ..]);
                acc += (block.iter().map(|v| v * v).sum::<f64>() / block.len() as f64).sqrt();
            }
            out[[k, i]] = acc / b as f64;
        }
    }
    Ok(out)
}

/// Overlap between the column spaces of `U_B` and `U_T` (each `p × r_g`).
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceOverlap {
    /// `|Q_Bᵀ Q_T|`.
    pub overlap: Array2<f64>,
    /// Principal-angle cosines, descending.
    pub cosines: Vec<f64>,
    pub rank_b: usize,
    pub rank_t: usize,
    /// Set when either matrix lacks full column rank; its basis then comes
    /// from a truncated SVD.
    pub rank_deficient: bool,
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Orthonormal basis of the column space and its rank.
fn column_basis(a: &DMatrix<f64>) -> (DMatrix<f64>, usize, bool) {
    let svd = a.clone().svd(true, false);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = smax * 1e-10 * a.nrows().max(a.ncols()) as f64;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank == a.ncols() && rank > 0 {
        let q = a.clone().qr().q();
        return (q, rank, false);
    }
    let u = svd.u.expect("requested");
    let mut idx: Vec<usize> = (0..sv.len()).filter(|&k| sv[k] > tol).collect();
    idx.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]));
    let cols: Vec<_> = idx.iter().map(|&k| u.column(k).into_owned()).collect();
    let q = if cols.is_empty() {
        DMatrix::zeros(a.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    (q, rank, true)
}

/// Takes the stored upsamplers (`r_g × p`) and compares their row spaces,
/// i.e. the column spaces of `U_Bᵀ` and `U_Tᵀ`.
pub fn gate_subspace_overlap(u_b: &Array2<f64>, u_t: &Array2<f64>) -> Result<SubspaceOverlap> {
    subspace_overlap(&u_b.t().to_owned(), &u_t.t().to_owned())
}

/// Column-space overlap of two `p × r` matrices.
pub fn subspace_overlap(a: &Array2<f64>, b: &Array2<f64>) -> Result<SubspaceOverlap> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!("{} vs {} rows", a.nrows(), b.nrows())));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("upsampler".into()));
    }
    let (qa, rank_b, da) = column_basis(&to_dmatrix(a));
    let (qb, rank_t, db) = column_basis(&to_dmatrix(b));
    let m = qa.transpose() * &qb;
    let overlap = Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)].abs());
    let mut cosines: Vec<f64> = if m.nrows() == 0 || m.ncols() == 0 {
        Vec::new()
    } else {
        m.svd(false, false).singular_values.iter().map(|s| s.clamp(0.0, 1.0)).collect()
    };
    cosines.sort_by(|x, y| y.total_cmp(x));
    Ok(SubspaceOverlap {
        overlap,
        cosines,
        rank_b,
        rank_t,
        rank_deficient: da || db,
    })
}

/// `label,c0,c1,...` rows with a leading comment block.
pub fn matrix_csv(comments: &[String], row_label: &str, cols: &[String], m: &Array2<f64>) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(row_label);
    for c in cols {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (i, row) in m.rows().into_iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v:e}"));
        }
        out.push('\n');
    }
    out
}
