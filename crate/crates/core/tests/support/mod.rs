//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgnn_core::adapt::{mmd_loss_with_bandwidth, AlignmentKind, L2Divisor};
use tgnn_core::data::{
    write_synthetic_domain, ObservedSample, SequenceSample, SyntheticDomainSpec,
};
use tgnn_core::eval::{ade, fde};
use tgnn_core::graph::{AdjacencyKind, NormMode};
use tgnn_core::numcore::{Bound, ParamSet, Tape, Tensor, Var};
use tgnn_core::train::{batch_losses, init_model, TrainConfig};
use tgnn_core::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Magnitude below which gradient errors are measured absolutely.
pub const GRAD_FLOOR: f64 = 1e-3;
/// Step reduction used to confirm a kink crossing.
pub const KINK_REFINE: f64 = 100.0;
/// Relative error allowed between tape and central-difference gradients.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Architecture used for gradient checks: `N ≤ 4`, `D_f = 8`, `L_obs = 4`,
/// `L_pred = 3`.
pub fn mini_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 2,
        n_max: 4,
        feature_dim: 8,
        obs_len: 4,
        pred_len: 3,
        hidden_dim: 8,
        ..TrainConfig::default()
    }
}

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
    /// Entries outside tolerance whose `±h` probes land on different pieces
    /// of a rectifier and that agree at a finer step. Central differences
    /// at `h` are no oracle there, so they are not scored.
    pub kinks: usize,
}

fn eval_loss<F>(params: &ParamSet, f: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    // Trainable binding keeps the rectifier records the pattern reads.
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let loss = f(&mut tape, &bound)?;
    Ok((tape.value(loss).item(), tape.activation_pattern()))
}

/// Compares tape gradients of every parameter entry with central
/// differences. The error of one entry is `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
/// An entry above [`GRAD_TOLERANCE`] whose probes cross a rectifier kink is
/// probed again with a step `KINK_REFINE` times smaller; if it agrees there
/// it is counted in `kinks` instead of `max_rel`.
pub fn gradcheck<F>(params: &ParamSet, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    gradcheck_with_step(params, f, FD_STEP)
}

pub fn gradcheck_with_step<F>(params: &ParamSet, f: F, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let loss = f(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = bound.vars().map(|v| grads.get(v)).collect();
    let base = tape.activation_pattern();

    let names: Vec<String> = params.names().map(str::to_owned).collect();
    let mut out = GradCheck {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
        kinks: 0,
    };
    let mut probe = params.clone();
    // Central difference of entry `i` of `name` and whether either probe
    // left the base piece.
    let mut central = |name: &str, i: usize, h: f64| -> Result<(f64, bool)> {
        let x0 = probe.get(name).unwrap().data()[i];
        probe.get_mut(name).unwrap().data_mut()[i] = x0 + h;
        let (up, up_pattern) = eval_loss(&probe, &f)?;
        probe.get_mut(name).unwrap().data_mut()[i] = x0 - h;
        let (down, down_pattern) = eval_loss(&probe, &f)?;
        probe.get_mut(name).unwrap().data_mut()[i] = x0;
        Ok((
            (up - down) / (2.0 * h),
            up_pattern != base || down_pattern != base,
        ))
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR);
    for (name, g) in names.iter().zip(&analytic) {
        for i in 0..g.len() {
            let a = g.data()[i];
            let (numeric, crossed) = central(name, i, step)?;
            let err = rel(a, numeric);
            if err >= GRAD_TOLERANCE && crossed {
                let (fine, _) = central(name, i, step / KINK_REFINE)?;
                if rel(a, fine) < GRAD_TOLERANCE {
                    out.kinks += 1;
                    continue;
                }
            }
            if err > out.max_rel {
                out.max_rel = err;
                out.worst = format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}");
            }
            out.checked += 1;
        }
    }
    Ok(out)
}

fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    t
}

/// Parameters for [`primitive_net`] with `n` rows and `m` columns.
pub fn primitive_params<R: Rng>(n: usize, m: usize, rng: &mut R) -> ParamSet {
    let mut p = ParamSet::default();
    p.insert("a", random_tensor(&[n, m], rng));
    p.insert("b", random_tensor(&[m, n], rng));
    p.insert("c", random_tensor(&[n, m], rng));
    p.insert("w", random_tensor(&[m, 2, n], rng));
    p
}

/// A scalar function touching every differentiable tape primitive.
pub fn primitive_net(tape: &mut Tape, bound: &Bound) -> Result<Var> {
    let (a, b, c, w) = (
        bound.var("a"),
        bound.var("b"),
        bound.var("c"),
        bound.var("w"),
    );
    let n = tape.shape(a)[0];
    let m = tape.shape(a)[1];

    let ab = tape.matmul(a, b)?;
    let rows = tape.softmax(ab, 1)?;
    let cols = tape.softmax(ab, 0)?;
    let attn = tape.mul(rows, cols)?;
    let attn = tape.sum(attn);

    let half = tape.scale(c, 0.5);
    let e = tape.exp(half);
    let lg = tape.add_scalar(e, 1.0);
    let lg = tape.log(lg);
    let sq = tape.square(c);
    let pw = tape.add_scalar(sq, 0.5);
    let pw = tape.powf(pw, 1.5);
    let q = tape.div(lg, pw)?;
    let th = tape.tanh(c);
    let q = tape.mul(q, th)?;
    let r = tape.sub(q, a)?;
    let r = tape.relu(r);
    let lr = tape.add(q, a)?;
    let lr = tape.leaky_relu(lr, 0.2);

    let cat = tape.concat(&[r, lr], 0)?;
    let flat = tape.reshape(cat, &[m, 2 * n])?;
    let tr = tape.transpose(flat)?;
    let sl = tape.slice(tr, 0, 1, 2 * n)?;
    let row_sums = tape.sum_axis(sl, 1)?;
    let col_means = tape.mean_axis(sl, 0)?;
    let dg = tape.diag(row_sums);
    let mixed = tape.matmul(dg, sl)?;
    let mixed = tape.mean(mixed);
    let norm = tape.sq_norm(col_means);

    let cube = tape.reshape(cat, &[2, n, m])?;
    let cube = tape.permute(cube, &[2, 0, 1])?;
    let cube = tape.mul(cube, w)?;
    let cube = tape.sum(cube);

    let mmd = mmd_loss_with_bandwidth(tape, a, c, 1.3)?;

    let mut total = attn;
    for v in [mixed, norm, cube, mmd] {
        total = tape.add(total, v)?;
    }
    Ok(total)
}

/// `n` random-walk tracks of `obs_len + pred_len` frames within
/// `±scale` meters, decentralized.
pub fn random_sample<R: Rng>(
    n: usize,
    obs_len: usize,
    pred_len: usize,
    scale: f64,
    rng: &mut R,
) -> SequenceSample {
    let total = obs_len + pred_len;
    let absolute = (0..n)
        .map(|_| {
            let mut p = [
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
            ];
            let v = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            (0..total)
                .map(|_| {
                    p = [
                        p[0] + v[0] + rng.random_range(-0.05..0.05),
                        p[1] + v[1] + rng.random_range(-0.05..0.05),
                    ];
                    p
                })
                .collect()
        })
        .collect();
    SequenceSample {
        ped_ids: (0..n as i64).collect(),
        absolute,
        relative: Vec::new(),
        offset: [0.0, 0.0],
        obs_len,
        pred_len,
    }
    .decentralize()
}

/// Pedestrian-weighted ADE and FDE of extrapolating each pedestrian's last
/// observed velocity.
pub fn constant_velocity_metrics(samples: &[SequenceSample]) -> (f64, f64) {
    let (mut a, mut f, mut peds) = (0.0, 0.0, 0usize);
    for s in samples {
        let pred: Vec<Vec<[f64; 2]>> = s
            .absolute
            .iter()
            .map(|t| {
                let last = t[s.obs_len - 1];
                let prev = t[s.obs_len - 2];
                let v = [last[0] - prev[0], last[1] - prev[1]];
                (1..=s.pred_len)
                    .map(|k| [last[0] + k as f64 * v[0], last[1] + k as f64 * v[1]])
                    .collect()
            })
            .collect();
        let truth = s.future_absolute();
        let n = s.num_peds();
        a += ade(&pred, &truth).unwrap() * n as f64;
        f += fde(&pred, &truth).unwrap() * n as f64;
        peds += n;
    }
    (a / peds as f64, f / peds as f64)
}

pub fn write_domain(dir: &Path, spec: &SyntheticDomainSpec) {
    write_synthetic_domain(dir, spec).expect("write synthetic domain");
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 0 {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    }
}

/// One randomized full-model gradient case: configuration, initialized
/// parameters, a source batch and target observations.
pub struct ModelCase {
    pub cfg: TrainConfig,
    pub params: ParamSet,
    pub source: Vec<SequenceSample>,
    pub target: Vec<ObservedSample>,
}

/// Case `i` cycles through adjacency kinds, alignment kinds (MMD aside, its
/// bandwidth is a value-dependent constant), normalization modes, L2
/// divisors and head bias. The as-written normalization only meets the
/// bounded adjacency kinds; with distance-valued kinds it overflows.
pub fn model_case(i: usize, seed: u64) -> ModelCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adjacency = [
        AdjacencyKind::L2,
        AdjacencyKind::reciprocal(),
        AdjacencyKind::Gaussian { sigma: 4.0 },
        AdjacencyKind::rational(),
    ][i % 4];
    let alignment = [
        AlignmentKind::L2,
        AlignmentKind::Coral,
        AlignmentKind::AvgPoolL2,
        AlignmentKind::LinearPoolL2,
        AlignmentKind::L2,
    ][i % 5];
    let cfg = TrainConfig {
        adjacency,
        alignment,
        norm: if i % 4 >= 2 && (i / 4) % 2 == 0 {
            NormMode::AsWritten
        } else {
            NormMode::Symmetric
        },
        l2_divisor: if i % 3 == 0 {
            L2Divisor::VectorDim
        } else {
            L2Divisor::FeatureDim
        },
        predict_bias: i % 2 == 1,
        seed,
        ..mini_config()
    };
    let mut params = init_model(&cfg, &mut rng);
    // Zero biases would sit exactly on ReLU kinks wherever features are dead.
    for (name, t) in params.iter_mut() {
        if name.ends_with(".bias") {
            for x in t.data_mut() {
                *x = rng.random_range(-0.5..0.5);
            }
        }
    }
    let draw = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=cfg.n_max);
        random_sample(n, cfg.obs_len, cfg.pred_len, 3.0, rng)
    };
    let source = (0..2).map(|_| draw(&mut rng)).collect();
    let target = (0..2).map(|_| draw(&mut rng).observed()).collect();
    ModelCase {
        cfg,
        params,
        source,
        target,
    }
}

impl ModelCase {
    pub fn loss(&self, tape: &mut Tape, bound: &Bound) -> Result<Var> {
        let src: Vec<&SequenceSample> = self.source.iter().collect();
        let tgt: Vec<&ObservedSample> = self.target.iter().collect();
        Ok(batch_losses(tape, bound, &self.cfg, &src, &tgt)?.total)
    }

    pub fn check(&self) -> Result<GradCheck> {
        gradcheck(&self.params, |tape, bound| self.loss(tape, bound))
    }
}
