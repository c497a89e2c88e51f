//! Attention-based domain alignment.
//!
//! Per-pedestrian feature slabs are flattened into vectors of length
//! `D_v = D_f × L_obs`, scored with `hᵀ tanh(W_f f)`, pooled into one context
//! vector per domain, and compared with an alignment loss.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{uniform_init, Bound, ParamSet, Tape, Tensor, Var};

pub const W_F: &str = "adapt.w_f";
pub const H: &str = "adapt.h";
pub const W_LIN: &str = "adapt.w_lin";

/// Bandwidth multipliers applied to the median pairwise distance.
pub const MMD_BANDWIDTH_SCALES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainTag {
    Source,
    Target,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Source => "source",
            Self::Target => "target",
        })
    }
}

/// Flattened per-pedestrian features of one domain, `M × D_v` on the tape.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVectorSet {
    pub vectors: Var,
    pub domain: DomainTag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignmentKind {
    L2,
    Mmd,
    Coral,
    AvgPoolL2,
    LinearPoolL2,
}

impl AlignmentKind {
    pub const ALL: [AlignmentKind; 5] = [
        Self::L2,
        Self::Mmd,
        Self::Coral,
        Self::AvgPoolL2,
        Self::LinearPoolL2,
    ];
}

impl fmt::Display for AlignmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::L2 => "l2",
            Self::Mmd => "mmd",
            Self::Coral => "coral",
            Self::AvgPoolL2 => "avg-pool-l2",
            Self::LinearPoolL2 => "linear-pool-l2",
        })
    }
}

impl FromStr for AlignmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown alignment kind {s:?}")))
    }
}

/// Divisor applied to the squared context-vector distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum L2Divisor {
    /// Divide by `D_f`.
    FeatureDim,
    /// Divide by `D_v = D_f × L_obs`.
    VectorDim,
}

impl fmt::Display for L2Divisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FeatureDim => "feature",
            Self::VectorDim => "vector",
        })
    }
}

impl FromStr for L2Divisor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "feature" => Ok(Self::FeatureDim),
            "vector" => Ok(Self::VectorDim),
            other => Err(Error::Config(format!("unknown l2 divisor {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptConfig {
    pub feature_dim: usize,
    pub obs_len: usize,
    /// Width of the tanh projection.
    pub hidden_dim: usize,
    pub kind: AlignmentKind,
    pub divisor: L2Divisor,
}

impl AdaptConfig {
    pub fn vector_dim(&self) -> usize {
        self.feature_dim * self.obs_len
    }
}

pub fn init_params<R: Rng + ?Sized>(cfg: &AdaptConfig, params: &mut ParamSet, rng: &mut R) {
    let dv = cfg.vector_dim();
    params.insert(W_F, uniform_init(&[cfg.hidden_dim, dv], dv, rng));
    params.insert(H, uniform_init(&[cfg.hidden_dim, 1], cfg.hidden_dim, rng));
    if cfg.kind == AlignmentKind::LinearPoolL2 {
        params.insert(W_LIN, uniform_init(&[dv, 1], dv, rng));
    }
}

/// Reshapes `N × D_f × L_obs` features into one row-major vector per
/// pedestrian.
pub fn flatten_features(
    tape: &mut Tape,
    features: Var,
    domain: DomainTag,
) -> Result<FeatureVectorSet> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 3 {
        return Err(Error::dim(
            "flatten_features",
            format!("expected rank 3, got {shape:?}"),
        ));
    }
    if !tape.value(features).all_finite() {
        return Err(Error::Training(
            "non-finite features before alignment".into(),
        ));
    }
    let vectors = tape.reshape(features, &[shape[0], shape[1] * shape[2]])?;
    Ok(FeatureVectorSet { vectors, domain })
}

/// Attention weights `β` (an `M × 1` column) over the vectors of one set.
pub fn domain_attention(tape: &mut Tape, set: Var, w_f: Var, h: Var) -> Result<Var> {
    let w_f_t = tape.transpose(w_f)?;
    let projected = tape.matmul(set, w_f_t)?;
    let activated = tape.tanh(projected);
    let scores = tape.matmul(activated, h)?;
    tape.softmax(scores, 0)
}

/// `c = Σ βᵢ fᵢ` as a `1 × D_v` row.
pub fn context_vector(tape: &mut Tape, set: Var, beta: Var) -> Result<Var> {
    let beta_t = tape.transpose(beta)?;
    tape.matmul(beta_t, set)
}

fn pooled(tape: &mut Tape, set: Var, bound: &Bound, kind: AlignmentKind) -> Result<Var> {
    match kind {
        AlignmentKind::AvgPoolL2 => tape.mean_axis(set, 0),
        AlignmentKind::LinearPoolL2 => {
            let scores = tape.matmul(set, bound.var(W_LIN))?;
            let beta = tape.softmax(scores, 0)?;
            context_vector(tape, set, beta)
        }
        _ => {
            let beta = domain_attention(tape, set, bound.var(W_F), bound.var(H))?;
            context_vector(tape, set, beta)
        }
    }
}

/// Scalar alignment loss between two feature sets.
pub fn alignment_loss(
    tape: &mut Tape,
    source: &FeatureVectorSet,
    target: &FeatureVectorSet,
    bound: &Bound,
    cfg: &AdaptConfig,
) -> Result<Var> {
    let (s, t) = (
        tape.shape(source.vectors).to_vec(),
        tape.shape(target.vectors).to_vec(),
    );
    if s.len() != 2 || t.len() != 2 || s[1] != t[1] {
        return Err(Error::Contract(format!(
            "alignment needs sets of equal dimension, got {s:?} and {t:?}"
        )));
    }
    match cfg.kind {
        AlignmentKind::Mmd => mmd_loss(tape, source.vectors, target.vectors),
        AlignmentKind::Coral => coral_loss(tape, source.vectors, target.vectors),
        kind => {
            let cs = pooled(tape, source.vectors, bound, kind)?;
            let ct = pooled(tape, target.vectors, bound, kind)?;
            let divisor = match cfg.divisor {
                L2Divisor::FeatureDim => cfg.feature_dim,
                L2Divisor::VectorDim => s[1],
            };
            context_l2(tape, cs, ct, divisor)
        }
    }
}

/// `‖c_s − c_t‖² / divisor`.
pub fn context_l2(tape: &mut Tape, cs: Var, ct: Var, divisor: usize) -> Result<Var> {
    let diff = tape.sub(cs, ct)?;
    let sq = tape.sq_norm(diff);
    Ok(tape.scale(sq, 1.0 / divisor as f64))
}

/// Squared Euclidean distances between the rows of `x` and `y`.
fn pairwise_sq_dist(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let (m, n) = (tape.shape(x)[0], tape.shape(y)[0]);
    let xx = tape.mul(x, x)?;
    let xx = tape.sum_axis(xx, 1)?;
    let yy = tape.mul(y, y)?;
    let yy = tape.sum_axis(yy, 1)?;
    let yy_t = tape.transpose(yy)?;
    let ones_n = tape.constant(Tensor::ones(&[1, n]));
    let ones_m = tape.constant(Tensor::ones(&[m, 1]));
    let rows = tape.matmul(xx, ones_n)?;
    let cols = tape.matmul(ones_m, yy_t)?;
    let y_t = tape.transpose(y)?;
    let cross = tape.matmul(x, y_t)?;
    let cross = tape.scale(cross, -2.0);
    let sum = tape.add(rows, cols)?;
    tape.add(sum, cross)
}

/// Median of pairwise distances over the pooled rows, used as the base
/// RBF bandwidth. Falls back to 1 when every point coincides.
fn median_distance(x: &Tensor, y: &Tensor) -> f64 {
    let d = x.cols();
    let rows: Vec<&[f64]> = x.data().chunks(d).chain(y.data().chunks(d)).collect();
    let mut dists = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let s: f64 = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            dists.push(s.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

fn kernel(tape: &mut Tape, sq_dist: Var, base: f64) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for scale in MMD_BANDWIDTH_SCALES {
        let sigma = scale * base;
        let z = tape.scale(sq_dist, -1.0 / (2.0 * sigma * sigma));
        let k = tape.exp(z);
        acc = Some(match acc {
            Some(a) => tape.add(a, k)?,
            None => k,
        });
    }
    let total = acc.expect("at least one bandwidth");
    Ok(tape.scale(total, 1.0 / MMD_BANDWIDTH_SCALES.len() as f64))
}

/// Mean of the within-set kernel entries, excluding the diagonal when the
/// set has at least two members.
fn within_mean(tape: &mut Tape, k: Var) -> Result<Var> {
    let m = tape.shape(k)[0];
    if m < 2 {
        return Ok(tape.mean(k));
    }
    let mut mask = Tensor::ones(&[m, m]);
    for i in 0..m {
        mask.set(i, i, 0.0);
    }
    let mask = tape.constant(mask);
    let off = tape.mul(k, mask)?;
    let s = tape.sum(off);
    Ok(tape.scale(s, 1.0 / (m * (m - 1)) as f64))
}

/// Unbiased multi-kernel RBF MMD², clamped at zero. The base bandwidth is
/// the median pairwise distance of the current values and carries no
/// gradient.
pub fn mmd_loss(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let base = median_distance(tape.value(x), tape.value(y));
    mmd_loss_with_bandwidth(tape, x, y, base)
}

/// [`mmd_loss`] with an explicit base bandwidth.
pub fn mmd_loss_with_bandwidth(tape: &mut Tape, x: Var, y: Var, base: f64) -> Result<Var> {
    if !(base > 0.0) {
        return Err(Error::Contract(format!(
            "MMD bandwidth must be > 0, got {base}"
        )));
    }
    let dxx = pairwise_sq_dist(tape, x, x)?;
    let dyy = pairwise_sq_dist(tape, y, y)?;
    let dxy = pairwise_sq_dist(tape, x, y)?;
    let kxx = kernel(tape, dxx, base)?;
    let kyy = kernel(tape, dyy, base)?;
    let kxy = kernel(tape, dxy, base)?;
    let exx = within_mean(tape, kxx)?;
    let eyy = within_mean(tape, kyy)?;
    let exy = tape.mean(kxy);
    let exy = tape.scale(exy, 2.0);
    let s = tape.add(exx, eyy)?;
    let mmd = tape.sub(s, exy)?;
    Ok(tape.relu(mmd))
}

/// Sample covariance of the rows of `x` (divisor `max(m − 1, 1)`).
fn covariance(tape: &mut Tape, x: Var) -> Result<Var> {
    let m = tape.shape(x)[0];
    let mean = tape.mean_axis(x, 0)?;
    let ones = tape.constant(Tensor::ones(&[m, 1]));
    let mean_rows = tape.matmul(ones, mean)?;
    let centered = tape.sub(x, mean_rows)?;
    let centered_t = tape.transpose(centered)?;
    let scatter = tape.matmul(centered_t, centered)?;
    Ok(tape.scale(scatter, 1.0 / (m.max(2) - 1) as f64))
}

/// `‖C_s − C_t‖²_F / (4 D_v²)`.
pub fn coral_loss(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let d = tape.shape(x)[1] as f64;
    let cx = covariance(tape, x)?;
    let cy = covariance(tape, y)?;
    let diff = tape.sub(cx, cy)?;
    let sq = tape.sq_norm(diff);
    Ok(tape.scale(sq, 1.0 / (4.0 * d * d)))
}

/// Writes feature vectors as `domain,ped_index,v0..v{D_v-1}` rows.
pub fn write_feature_csv(path: &Path, sets: &[(String, Tensor)]) -> Result<()> {
    let dv = sets.first().map_or(0, |(_, t)| t.cols());
    let mut out = String::from("domain,ped_index");
    for k in 0..dv {
        write!(out, ",v{k}").expect("write to string");
    }
    out.push('\n');
    for (domain, vectors) in sets {
        if vectors.cols() != dv {
            return Err(Error::Contract("feature sets differ in dimension".into()));
        }
        for (i, row) in vectors.data().chunks(dv).enumerate() {
            write!(out, "{domain},{i}").expect("write to string");
            for v in row {
                write!(out, ",{v}").expect("write to string");
            }
            out.push('\n');
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
