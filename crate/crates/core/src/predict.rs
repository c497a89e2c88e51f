//! Temporal prediction head and bivariate Gaussian output.
//!
//! The first temporal layer maps the time axis from `L_obs` to `L_pred` with a
//! learned projection; the next two are width-3 convolutions over time with
//! zero padding and a residual connection. A linear layer then emits five raw
//! values per pedestrian and step: `μx, μy, log σx, log σy, atanh ρ`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Point;
use crate::error::{Error, Result};
use crate::numcore::{uniform_init, Bound, ParamSet, Tape, Tensor, Var};

pub const TIME_PROJ: &str = "predict.time_proj";
pub const W_P: &str = "predict.w_p";
pub const CONV_LAYERS: usize = 2;
pub const KERNEL_WIDTH: usize = 3;

pub fn conv_weight_name(layer: usize) -> String {
    format!("predict.conv{}", layer + 1)
}

fn bias_name(base: &str) -> String {
    format!("{base}.bias")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictConfig {
    pub feature_dim: usize,
    pub obs_len: usize,
    pub pred_len: usize,
    pub bias: bool,
}

pub fn init_params<R: Rng + ?Sized>(cfg: &PredictConfig, params: &mut ParamSet, rng: &mut R) {
    let d = cfg.feature_dim;
    params.insert(
        TIME_PROJ,
        uniform_init(&[cfg.obs_len, cfg.pred_len], cfg.obs_len, rng),
    );
    for l in 0..CONV_LAYERS {
        params.insert(
            conv_weight_name(l),
            uniform_init(&[KERNEL_WIDTH * d, d], KERNEL_WIDTH * d, rng),
        );
    }
    params.insert(W_P, uniform_init(&[d, 5], d, rng));
    if cfg.bias {
        params.insert(bias_name(TIME_PROJ), Tensor::zeros(&[1, cfg.pred_len]));
        for l in 0..CONV_LAYERS {
            params.insert(bias_name(&conv_weight_name(l)), Tensor::zeros(&[1, d]));
        }
        params.insert(bias_name(W_P), Tensor::zeros(&[1, 5]));
    }
}

fn add_row_bias(tape: &mut Tape, x: Var, bound: &Bound, weight: &str) -> Result<Var> {
    match bound.try_var(&bias_name(weight)) {
        Some(b) => {
            let rows = tape.shape(x)[0];
            let ones = tape.constant(Tensor::ones(&[rows, 1]));
            let spread = tape.matmul(ones, b)?;
            tape.add(x, spread)
        }
        None => Ok(x),
    }
}

/// `L×L` matrix `S` with `(X·S)[t] = X[t + offset]`, zero outside the window.
fn shift_matrix(len: usize, offset: isize) -> Tensor {
    let mut s = Tensor::zeros(&[len, len]);
    for t in 0..len {
        let src = t as isize + offset;
        if (0..len as isize).contains(&src) {
            s.set(src as usize, t, 1.0);
        }
    }
    s
}

/// Width-3 temporal convolution with residual: `ReLU(conv(x) + x)`.
fn temporal_conv(tape: &mut Tape, x: Var, weight: Var, bound: &Bound, name: &str) -> Result<Var> {
    let [n, d, l] = dims3(tape, x)?;
    let flat = tape.reshape(x, &[n * d, l])?;
    let mut taps = Vec::with_capacity(KERNEL_WIDTH);
    for offset in -1isize..=1 {
        let s = tape.constant(shift_matrix(l, offset));
        let shifted = tape.matmul(flat, s)?;
        let cube = tape.reshape(shifted, &[n, d, l])?;
        let time_major = tape.permute(cube, &[0, 2, 1])?;
        taps.push(tape.reshape(time_major, &[n * l, d])?);
    }
    let cols = tape.concat(&taps, 1)?;
    let mixed = tape.matmul(cols, weight)?;
    let mixed = add_row_bias(tape, mixed, bound, name)?;
    let cube = tape.reshape(mixed, &[n, l, d])?;
    let channel_major = tape.permute(cube, &[0, 2, 1])?;
    let residual = tape.add(channel_major, x)?;
    Ok(tape.relu(residual))
}

fn dims3(tape: &Tape, x: Var) -> Result<[usize; 3]> {
    match *tape.shape(x) {
        [n, d, l] => Ok([n, d, l]),
        ref s => Err(Error::dim(
            "temporal_predict",
            format!("expected N×D×L, got {s:?}"),
        )),
    }
}

/// Maps `N × D_f × L_obs` features to `N × D_f × L_pred`.
pub fn temporal_predict(tape: &mut Tape, features: Var, bound: &Bound) -> Result<Var> {
    let [n, d, l_obs] = dims3(tape, features)?;
    let proj = bound.var(TIME_PROJ);
    if tape.shape(proj)[0] != l_obs {
        return Err(Error::dim(
            "temporal_predict",
            format!("time projection {:?} vs L_obs {l_obs}", tape.shape(proj)),
        ));
    }
    let l_pred = tape.shape(proj)[1];
    let flat = tape.reshape(features, &[n * d, l_obs])?;
    let projected = tape.matmul(flat, proj)?;
    let projected = add_row_bias(tape, projected, bound, TIME_PROJ)?;
    let activated = tape.relu(projected);
    let mut h = tape.reshape(activated, &[n, d, l_pred])?;
    for layer in 0..CONV_LAYERS {
        let name = conv_weight_name(layer);
        h = temporal_conv(tape, h, bound.var(&name), bound, &name)?;
    }
    Ok(h)
}

/// Tape handles for the Gaussian parameters, rows ordered pedestrian-major
/// (`row = ped · L_pred + step`).
#[derive(Clone, Copy, Debug)]
pub struct GaussianHead {
    pub mu: Var,
    pub log_sigma: Var,
    pub sigma: Var,
    pub rho: Var,
    pub num_peds: usize,
    pub pred_len: usize,
}

pub fn gaussian_head(tape: &mut Tape, f_pred: Var, bound: &Bound) -> Result<GaussianHead> {
    let [n, d, l] = dims3(tape, f_pred)?;
    let w_p = bound.var(W_P);
    if tape.shape(w_p) != [d, 5] {
        return Err(Error::dim(
            "gaussian_head",
            format!("W_p {:?}, expected [{d}, 5]", tape.shape(w_p)),
        ));
    }
    let time_major = tape.permute(f_pred, &[0, 2, 1])?;
    let rows = tape.reshape(time_major, &[n * l, d])?;
    let raw = tape.matmul(rows, w_p)?;
    let raw = add_row_bias(tape, raw, bound, W_P)?;
    if !tape.value(raw).all_finite() {
        return Err(Error::Training("non-finite Gaussian head output".into()));
    }
    from_raw(tape, raw, n, l)
}

/// Splits an `(N·L) × 5` raw matrix into constrained Gaussian parameters.
pub fn from_raw(
    tape: &mut Tape,
    raw: Var,
    num_peds: usize,
    pred_len: usize,
) -> Result<GaussianHead> {
    let mu = tape.slice(raw, 1, 0, 2)?;
    let log_sigma = tape.slice(raw, 1, 2, 4)?;
    let sigma = tape.exp(log_sigma);
    let rho_raw = tape.slice(raw, 1, 4, 5)?;
    let rho = tape.tanh(rho_raw);
    Ok(GaussianHead {
        mu,
        log_sigma,
        sigma,
        rho,
        num_peds,
        pred_len,
    })
}

/// Bivariate Gaussian NLL summed over steps and averaged over pedestrians.
/// `truth` is `(N·L_pred) × 2` in the head's row order.
pub fn nll_loss(tape: &mut Tape, head: &GaussianHead, truth: &Tensor) -> Result<Var> {
    let rows = head.num_peds * head.pred_len;
    if truth.shape() != [rows, 2] {
        return Err(Error::dim(
            "nll_loss",
            format!("truth {:?}, expected [{rows}, 2]", truth.shape()),
        ));
    }
    let truth = tape.constant(truth.clone());
    let diff = tape.sub(truth, head.mu)?;
    let z = tape.div(diff, head.sigma)?;
    let zx = tape.slice(z, 1, 0, 1)?;
    let zy = tape.slice(z, 1, 1, 2)?;
    let zx2 = tape.square(zx);
    let zy2 = tape.square(zy);
    let zxy = tape.mul(zx, zy)?;
    let rzxy = tape.mul(head.rho, zxy)?;
    let rzxy = tape.scale(rzxy, -2.0);
    let q = tape.add(zx2, zy2)?;
    let q = tape.add(q, rzxy)?;
    let rho2 = tape.square(head.rho);
    let rho2 = tape.scale(rho2, -1.0);
    let one_minus_rho2 = tape.add_scalar(rho2, 1.0);
    let denom = tape.scale(one_minus_rho2, 2.0);
    let mahalanobis = tape.div(q, denom)?;
    let log_det = tape.log(one_minus_rho2);
    let log_det = tape.scale(log_det, 0.5);
    let a = tape.sum(mahalanobis);
    let b = tape.sum(head.log_sigma);
    let c = tape.sum(log_det);
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    let total = tape.add_scalar(total, rows as f64 * (2.0 * std::f64::consts::PI).ln());
    Ok(tape.scale(total, 1.0 / head.num_peds as f64))
}

/// Gaussian parameters of one pedestrian at one future step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianStep {
    pub mu: Point,
    pub sigma: [f64; 2],
    pub rho: f64,
}

impl GaussianStep {
    /// Negative log density of `p`.
    pub fn nll(&self, p: Point) -> Result<f64> {
        let [sx, sy] = self.sigma;
        if !(sx > 0.0 && sy > 0.0) || !(self.rho.abs() < 1.0) {
            return Err(Error::Contract(format!(
                "invalid Gaussian: sigma {:?}, rho {}",
                self.sigma, self.rho
            )));
        }
        let zx = (p[0] - self.mu[0]) / sx;
        let zy = (p[1] - self.mu[1]) / sy;
        let r = 1.0 - self.rho * self.rho;
        let q = zx * zx + zy * zy - 2.0 * self.rho * zx * zy;
        Ok((2.0 * std::f64::consts::PI).ln() + sx.ln() + sy.ln() + 0.5 * r.ln() + q / (2.0 * r))
    }

    /// Draws one point via the Cholesky factor of the 2×2 covariance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let [sx, sy] = self.sigma;
        [
            self.mu[0] + sx * z1,
            self.mu[1] + sy * (self.rho * z1 + (1.0 - self.rho * self.rho).sqrt() * z2),
        ]
    }
}

/// Per-pedestrian, per-step Gaussian predictions `[ped][step]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTrajectory {
    pub steps: Vec<Vec<GaussianStep>>,
}

impl GaussianTrajectory {
    pub fn from_head(tape: &Tape, head: &GaussianHead) -> Self {
        let (mu, sigma, rho) = (
            tape.value(head.mu),
            tape.value(head.sigma),
            tape.value(head.rho),
        );
        let steps = (0..head.num_peds)
            .map(|i| {
                (0..head.pred_len)
                    .map(|t| {
                        let r = i * head.pred_len + t;
                        GaussianStep {
                            mu: [mu.at(r, 0), mu.at(r, 1)],
                            sigma: [sigma.at(r, 0), sigma.at(r, 1)],
                            rho: rho.at(r, 0),
                        }
                    })
                    .collect()
            })
            .collect();
        Self { steps }
    }

    pub fn num_peds(&self) -> usize {
        self.steps.len()
    }

    /// NLL summed over steps and averaged over pedestrians.
    pub fn nll(&self, truth: &[Vec<Point>]) -> Result<f64> {
        if truth.len() != self.steps.len()
            || truth
                .iter()
                .zip(&self.steps)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::dim("nll", "truth shape differs from prediction"));
        }
        let mut total = 0.0;
        for (track, steps) in truth.iter().zip(&self.steps) {
            for (p, g) in track.iter().zip(steps) {
                total += g.nll(*p)?;
            }
        }
        Ok(total / self.steps.len() as f64)
    }

    /// Means only, `[ped][step]`.
    pub fn means(&self) -> Vec<Vec<Point>> {
        self.steps
            .iter()
            .map(|s| s.iter().map(|g| g.mu).collect())
            .collect()
    }

    /// Draws `k` joint trajectories `[draw][ped][step]`. Draws are produced in
    /// order, so the first `j` draws of a `k`-draw call equal a `j`-draw call
    /// from the same RNG state.
    pub fn sample_trajectories<R: Rng + ?Sized>(
        &self,
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<Vec<Point>>>> {
        if k < 1 {
            return Err(Error::Config(
                "number of sampled trajectories must be >= 1".into(),
            ));
        }
        Ok((0..k)
            .map(|_| {
                self.steps
                    .iter()
                    .map(|s| s.iter().map(|g| g.sample(rng)).collect())
                    .collect()
            })
            .collect())
    }
}

/// Flattens `[ped][step]` points into the head's `(N·L) × 2` row order.
pub fn points_to_rows(points: &[Vec<Point>]) -> Result<Tensor> {
    let rows: usize = points.iter().map(Vec::len).sum();
    let data = points
        .iter()
        .flatten()
        .flat_map(|p| p.iter().copied())
        .collect();
    Tensor::new(vec![rows, 2], data)
}
