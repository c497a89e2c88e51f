//! Per-frame pedestrian graphs: distance-based adjacency, graph attention
//! over adjacency columns, and a three-layer GCN over the observation window.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::{ObservedSample, Point};
use crate::error::{Error, Result};
use crate::numcore::{uniform_init, Bound, ParamSet, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const GCN_LAYERS: usize = 3;

/// How an inter-pedestrian distance `a` becomes an adjacency weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdjacencyKind {
    /// `a`
    L2,
    /// `1 / (a + eps)`
    Reciprocal { eps: f64 },
    /// `exp(-a² / 2σ²)`
    Gaussian { sigma: f64 },
    /// `1 - a² / (a² + c)`
    Rational { c: f64 },
}

impl AdjacencyKind {
    pub const DEFAULT_EPS: f64 = 0.001;
    pub const DEFAULT_C: f64 = 0.001;

    pub fn reciprocal() -> Self {
        Self::Reciprocal {
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn rational() -> Self {
        Self::Rational { c: Self::DEFAULT_C }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::L2 => true,
            Self::Reciprocal { eps } => eps > 0.0,
            Self::Gaussian { sigma } => sigma > 0.0,
            Self::Rational { c } => c > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "adjacency {self}: constants must be > 0"
            )))
        }
    }

    pub fn weight(&self, distance: f64) -> f64 {
        match *self {
            Self::L2 => distance,
            Self::Reciprocal { eps } => 1.0 / (distance + eps),
            Self::Gaussian { sigma } => (-distance * distance / (2.0 * sigma * sigma)).exp(),
            Self::Rational { c } => {
                let d2 = distance * distance;
                1.0 - d2 / (d2 + c)
            }
        }
    }
}

impl fmt::Display for AdjacencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::L2 => write!(f, "l2"),
            Self::Reciprocal { eps } if eps == Self::DEFAULT_EPS => write!(f, "reciprocal"),
            Self::Reciprocal { eps } => write!(f, "reciprocal:{eps}"),
            Self::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            Self::Rational { c } if c == Self::DEFAULT_C => write!(f, "rational"),
            Self::Rational { c } => write!(f, "rational:{c}"),
        }
    }
}

impl FromStr for AdjacencyKind {
    type Err = Error;

    /// Accepts `l2`, `reciprocal[:eps]`, `gaussian:sigma`, `rational[:c]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |a: Option<&str>, default: Option<f64>| -> Result<f64> {
            match (a, default) {
                (Some(a), _) => a
                    .parse()
                    .map_err(|_| Error::Config(format!("bad adjacency constant {a:?}"))),
                (None, Some(d)) => Ok(d),
                (None, None) => Err(Error::Config(format!("adjacency {name} needs a constant"))),
            }
        };
        let kind = match name {
            "l2" => Self::L2,
            "reciprocal" => Self::Reciprocal {
                eps: num(arg, Some(Self::DEFAULT_EPS))?,
            },
            "gaussian" => Self::Gaussian {
                sigma: num(arg, None)?,
            },
            "rational" => Self::Rational {
                c: num(arg, Some(Self::DEFAULT_C))?,
            },
            other => return Err(Error::Config(format!("unknown adjacency kind {other:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Degree normalization applied inside each GCN layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// `D^{-1/2} Â D^{+1/2}`
    AsWritten,
    /// `D^{-1/2} Â D^{-1/2}`
    Symmetric,
}

impl NormMode {
    fn right_exponent(self) -> f64 {
        match self {
            Self::AsWritten => 0.5,
            Self::Symmetric => -0.5,
        }
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AsWritten => "as-written",
            Self::Symmetric => "symmetric",
        })
    }
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "as-written" => Ok(Self::AsWritten),
            "symmetric" => Ok(Self::Symmetric),
            other => Err(Error::Config(format!(
                "unknown normalization mode {other:?}"
            ))),
        }
    }
}

/// Architecture constants of the graph encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphConfig {
    pub feature_dim: usize,
    pub n_max: usize,
    pub adjacency: AdjacencyKind,
    pub norm: NormMode,
}

pub const W_O: &str = "graph.w_o";
pub const W_L: &str = "graph.w_l";

pub fn gcn_weight_name(layer: usize) -> String {
    format!("graph.gcn{}", layer + 1)
}

/// Adds freshly initialized graph parameters to `params`.
pub fn init_params<R: Rng + ?Sized>(cfg: &GraphConfig, params: &mut ParamSet, rng: &mut R) {
    let d = cfg.feature_dim;
    params.insert(W_O, uniform_init(&[2, d], 2, rng));
    params.insert(W_L, uniform_init(&[1, 2 * cfg.n_max], 2 * cfg.n_max, rng));
    for l in 0..GCN_LAYERS {
        params.insert(gcn_weight_name(l), uniform_init(&[d, d], d, rng));
    }
}

/// Pairwise adjacency of one frame. The diagonal is the kind evaluated at
/// distance zero.
pub fn build_adjacency(frame: &[Point], kind: AdjacencyKind) -> Result<Tensor> {
    if frame.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::Data(
            "non-finite coordinate in adjacency input".into(),
        ));
    }
    let n = frame.len();
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let d = (frame[i][0] - frame[j][0]).hypot(frame[i][1] - frame[j][1]);
            let w = kind.weight(d);
            a.set(i, j, w);
            a.set(j, i, w);
        }
    }
    Ok(a)
}

/// `ReLU(coords · W_o)` for an `N×2` coordinate matrix.
pub fn init_node_features(tape: &mut Tape, coords: Var, w_o: Var) -> Result<Var> {
    let projected = tape.matmul(coords, w_o)?;
    Ok(tape.relu(projected))
}

/// Output of [`graph_attention`].
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    /// Refined adjacency `A'`, column `i` is `p_i`.
    pub adjacency: Var,
    /// Attention coefficients, row `i` sums to one.
    pub alpha: Var,
}

/// Graph attention over the columns of an `N×N` adjacency.
///
/// The scorer `W_l` has `2·n_max` entries. Columns are conceptually
/// zero-padded to `n_max`, so only the first `N` weights of each half ever
/// meet a nonzero entry; the softmax runs over the `N` real neighbours.
pub fn graph_attention(
    tape: &mut Tape,
    adjacency: Var,
    w_l: Var,
    n_max: usize,
) -> Result<Attention> {
    let shape = tape.shape(adjacency).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::dim(
            "graph_attention",
            format!("adjacency shape {shape:?}"),
        ));
    }
    let n = shape[0];
    if n > n_max {
        return Err(Error::Capacity { n, n_max });
    }
    if tape.shape(w_l) != [1, 2 * n_max] {
        return Err(Error::dim(
            "graph_attention",
            format!(
                "W_l shape {:?}, expected [1, {}]",
                tape.shape(w_l),
                2 * n_max
            ),
        ));
    }
    let w_self = tape.slice(w_l, 1, 0, n)?;
    let w_other = tape.slice(w_l, 1, n_max, n_max + n)?;
    // s_self[i] = W_l[..N] · a_i, s_other[j] = W_l[N_max..N_max+N] · a_j
    let s_self = tape.matmul(w_self, adjacency)?;
    let s_other = tape.matmul(w_other, adjacency)?;
    let ones_row = tape.constant(Tensor::ones(&[1, n]));
    let ones_col = tape.constant(Tensor::ones(&[n, 1]));
    let s_self_col = tape.transpose(s_self)?;
    let rows = tape.matmul(s_self_col, ones_row)?;
    let cols = tape.matmul(ones_col, s_other)?;
    let scores = tape.add(rows, cols)?;
    let activated = tape.leaky_relu(scores, LEAKY_SLOPE);
    let alpha = tape.softmax(activated, 1)?;
    let alpha_t = tape.transpose(alpha)?;
    let mixed = tape.matmul(adjacency, alpha_t)?;
    let refined = tape.relu(mixed);
    Ok(Attention {
        adjacency: refined,
        alpha,
    })
}

/// Degree-normalized propagation matrix for one frame.
pub fn normalized_adjacency(tape: &mut Tape, refined: Var, mode: NormMode) -> Result<Var> {
    let n = tape.shape(refined)[0];
    let eye = tape.constant(Tensor::eye(n));
    let a_hat = tape.add(refined, eye)?;
    let degree = tape.sum_axis(a_hat, 1)?;
    if let Some(d) = tape.value(degree).data().iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::Internal(format!(
            "non-positive degree {d} after adding self loops"
        )));
    }
    let left = tape.powf(degree, -0.5);
    let right = tape.powf(degree, mode.right_exponent());
    let left = tape.diag(left);
    let right = tape.diag(right);
    let tmp = tape.matmul(left, a_hat)?;
    tape.matmul(tmp, right)
}

/// Runs the GCN stack frame by frame with weights shared across time.
pub fn gcn_forward(
    tape: &mut Tape,
    refined: &[Var],
    features: &[Var],
    weights: &[Var],
    mode: NormMode,
) -> Result<Vec<Var>> {
    if refined.len() != features.len() {
        return Err(Error::dim(
            "gcn_forward",
            format!(
                "{} adjacency frames vs {} feature frames",
                refined.len(),
                features.len()
            ),
        ));
    }
    let mut out = Vec::with_capacity(features.len());
    for (&a, &f) in refined.iter().zip(features) {
        let norm = normalized_adjacency(tape, a, mode)?;
        let mut h = f;
        for &w in weights {
            let propagated = tape.matmul(norm, h)?;
            let mixed = tape.matmul(propagated, w)?;
            h = tape.relu(mixed);
        }
        out.push(h);
    }
    Ok(out)
}

/// Stacks per-frame `N×D_f` matrices into an `N×D_f×L` tensor.
pub fn stack_frames(tape: &mut Tape, frames: &[Var]) -> Result<Var> {
    let shape = tape.shape(frames[0]).to_vec();
    let (n, d, l) = (shape[0], shape[1], frames.len());
    let cat = tape.concat(frames, 0)?;
    let cube = tape.reshape(cat, &[l, n, d])?;
    tape.permute(cube, &[1, 2, 0])
}

/// Encodes the observed window of one scene into `N×D_f×L_obs` features.
pub fn encode(
    tape: &mut Tape,
    obs: &ObservedSample,
    bound: &Bound,
    cfg: &GraphConfig,
) -> Result<Var> {
    let n = obs.num_peds();
    if n > cfg.n_max {
        return Err(Error::Capacity {
            n,
            n_max: cfg.n_max,
        });
    }
    let w_o = bound.var(W_O);
    let w_l = bound.var(W_L);
    let weights: Vec<Var> = (0..GCN_LAYERS)
        .map(|l| bound.var(&gcn_weight_name(l)))
        .collect();
    let mut refined = Vec::with_capacity(obs.obs_len());
    let mut features = Vec::with_capacity(obs.obs_len());
    for t in 0..obs.obs_len() {
        let frame = obs.frame(t);
        let adjacency = tape.constant(build_adjacency(&frame, cfg.adjacency)?);
        refined.push(graph_attention(tape, adjacency, w_l, cfg.n_max)?.adjacency);
        let coords = Tensor::new(vec![n, 2], frame.iter().flatten().copied().collect())?;
        let coords = tape.constant(coords);
        features.push(init_node_features(tape, coords, w_o)?);
    }
    let out = gcn_forward(tape, &refined, &features, &weights, cfg.norm)?;
    stack_frames(tape, &out)
}
