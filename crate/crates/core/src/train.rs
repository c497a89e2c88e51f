//! Joint optimization of the prediction and alignment losses.

use std::fmt::{self, Display};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{self, AdaptConfig, AlignmentKind, DomainTag, FeatureVectorSet, L2Divisor};
use crate::data::{load_split, ObservedSample, SequenceSample, WindowConfig};
use crate::error::{Error, Result};
use crate::graph::{self, AdjacencyKind, GraphConfig, NormMode};
use crate::numcore::{AdamState, Bound, ParamSet, Tape, Tensor, Var};
use crate::predict::{self, GaussianHead, PredictConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const LOG_HEADER: &str = "epoch,L_pre,L_align,L,lr";

mod as_str {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

/// Every knob of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the alignment loss.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate once `lr_drop_epoch` epochs have completed.
    pub lr_late: f64,
    pub lr_drop_epoch: usize,
    pub seed: u64,
    #[serde(with = "as_str")]
    pub adjacency: AdjacencyKind,
    #[serde(with = "as_str")]
    pub alignment: AlignmentKind,
    #[serde(with = "as_str")]
    pub norm: NormMode,
    pub n_max: usize,
    pub feature_dim: usize,
    pub obs_len: usize,
    pub pred_len: usize,
    pub stride: usize,
    /// Width of the domain-attention projection.
    pub hidden_dim: usize,
    #[serde(with = "as_str")]
    pub l2_divisor: L2Divisor,
    pub predict_bias: bool,
    /// Global gradient-norm clip, off when `None`.
    pub grad_clip: Option<f64>,
    /// Seconds between frames.
    pub frame_interval: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epochs: 200,
            batch_size: 16,
            lr: 0.001,
            lr_late: 0.0005,
            lr_drop_epoch: 100,
            seed: 0,
            adjacency: AdjacencyKind::L2,
            alignment: AlignmentKind::L2,
            norm: NormMode::Symmetric,
            n_max: 64,
            feature_dim: 64,
            obs_len: 8,
            pred_len: 12,
            stride: 1,
            hidden_dim: 64,
            l2_divisor: L2Divisor::FeatureDim,
            predict_bias: false,
            grad_clip: None,
            frame_interval: 0.4,
            checkpoint_every: 50,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

impl TrainConfig {
    /// Keys accepted by [`TrainConfig::set`], in rendering order.
    pub const KEYS: [&'static str; 21] = [
        "lambda",
        "epochs",
        "batch_size",
        "lr",
        "lr_late",
        "lr_drop_epoch",
        "seed",
        "adjacency",
        "alignment",
        "norm",
        "n_max",
        "feature_dim",
        "obs_len",
        "pred_len",
        "stride",
        "hidden_dim",
        "l2_divisor",
        "predict_bias",
        "grad_clip",
        "frame_interval",
        "checkpoint_every",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr_late > 0.0) {
            return bad("learning rates must be > 0".into());
        }
        if self.n_max < 1 || self.feature_dim < 1 || self.hidden_dim < 1 {
            return bad("n_max, feature_dim and hidden_dim must be >= 1".into());
        }
        if !(self.frame_interval > 0.0) {
            return bad("frame_interval must be > 0".into());
        }
        if self.checkpoint_every < 1 {
            return bad("checkpoint_every must be >= 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be > 0, got {c}"));
            }
        }
        self.adjacency.validate()?;
        self.window().validate()
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda" => self.lambda = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_late" => self.lr_late = parse(key, value)?,
            "lr_drop_epoch" => self.lr_drop_epoch = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "adjacency" => self.adjacency = parse(key, value)?,
            "alignment" => self.alignment = parse(key, value)?,
            "norm" => self.norm = parse(key, value)?,
            "n_max" => self.n_max = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "obs_len" => self.obs_len = parse(key, value)?,
            "pred_len" => self.pred_len = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "l2_divisor" => self.l2_divisor = parse(key, value)?,
            "predict_bias" => self.predict_bias = parse(key, value)?,
            "grad_clip" => {
                self.grad_clip = match value.trim() {
                    "off" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "frame_interval" => self.frame_interval = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Textual value of one field, the inverse of [`TrainConfig::set`].
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "lambda" => self.lambda.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "lr_late" => self.lr_late.to_string(),
            "lr_drop_epoch" => self.lr_drop_epoch.to_string(),
            "seed" => self.seed.to_string(),
            "adjacency" => self.adjacency.to_string(),
            "alignment" => self.alignment.to_string(),
            "norm" => self.norm.to_string(),
            "n_max" => self.n_max.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "obs_len" => self.obs_len.to_string(),
            "pred_len" => self.pred_len.to_string(),
            "stride" => self.stride.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "l2_divisor" => self.l2_divisor.to_string(),
            "predict_bias" => self.predict_bias.to_string(),
            "grad_clip" => self.grad_clip.map_or("off".into(), |c| c.to_string()),
            "frame_interval" => self.frame_interval.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        })
    }

    /// `key = value` lines for every field.
    pub fn render(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Hex SHA-256 of [`TrainConfig::render`], truncated to 16 characters.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch > self.lr_drop_epoch {
            self.lr_late
        } else {
            self.lr
        }
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            obs_len: self.obs_len,
            pred_len: self.pred_len,
            stride: self.stride,
        }
    }

    pub fn graph(&self) -> GraphConfig {
        GraphConfig {
            feature_dim: self.feature_dim,
            n_max: self.n_max,
            adjacency: self.adjacency,
            norm: self.norm,
        }
    }

    pub fn adapt(&self) -> AdaptConfig {
        AdaptConfig {
            feature_dim: self.feature_dim,
            obs_len: self.obs_len,
            hidden_dim: self.hidden_dim,
            kind: self.alignment,
            divisor: self.l2_divisor,
        }
    }

    pub fn predict(&self) -> PredictConfig {
        PredictConfig {
            feature_dim: self.feature_dim,
            obs_len: self.obs_len,
            pred_len: self.pred_len,
            bias: self.predict_bias,
        }
    }
}

/// Fresh parameters for the whole model.
pub fn init_model<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> ParamSet {
    let mut params = ParamSet::default();
    graph::init_params(&cfg.graph(), &mut params, rng);
    adapt::init_params(&cfg.adapt(), &mut params, rng);
    predict::init_params(&cfg.predict(), &mut params, rng);
    params
}

/// Encoder features (`N × D_f × L_obs`) and Gaussian head for one scene.
pub fn forward(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &TrainConfig,
    obs: &ObservedSample,
) -> Result<(Var, GaussianHead)> {
    let features = graph::encode(tape, obs, bound, &cfg.graph())?;
    let f_pred = predict::temporal_predict(tape, features, bound)?;
    let head = predict::gaussian_head(tape, f_pred, bound)?;
    Ok((features, head))
}

/// `L = L_pre + λ·L_align`.
pub fn joint_loss(tape: &mut Tape, l_pre: Var, l_align: Var, lambda: f64) -> Result<Var> {
    let (a, b) = (tape.value(l_pre).item(), tape.value(l_align).item());
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss: L_pre {a}, L_align {b}"
        )));
    }
    let weighted = tape.scale(l_align, lambda);
    tape.add(l_pre, weighted)
}

/// Pairs every source batch with a target batch for one epoch.
///
/// The source order is shuffled; the target stream is shuffled and cycles,
/// reshuffling on each wrap, so its length never limits the epoch.
pub fn pair_batches<S: Clone, T: Clone, R: Rng + ?Sized>(
    source: &[S],
    target: &[T],
    rng: &mut R,
) -> Result<Vec<(S, T)>> {
    if target.is_empty() {
        return Err(Error::Protocol(
            "target observed trajectories required".into(),
        ));
    }
    if source.is_empty() {
        return Err(Error::Protocol("source training samples required".into()));
    }
    let mut src: Vec<usize> = (0..source.len()).collect();
    src.shuffle(rng);
    let mut tgt: Vec<usize> = (0..target.len()).collect();
    tgt.shuffle(rng);
    let mut pos = 0;
    let mut out = Vec::with_capacity(source.len());
    for i in src {
        if pos == tgt.len() {
            tgt.shuffle(rng);
            pos = 0;
        }
        out.push((source[i].clone(), target[tgt[pos]].clone()));
        pos += 1;
    }
    Ok(out)
}

fn shuffled_chunks<R: Rng + ?Sized>(len: usize, size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

/// Loss handles for one step.
#[derive(Clone, Copy, Debug)]
pub struct StepLosses {
    pub prediction: Var,
    pub alignment: Var,
    pub total: Var,
}

fn pooled_set(tape: &mut Tape, parts: &[Var], domain: DomainTag) -> Result<FeatureVectorSet> {
    let vectors = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat(parts, 0)?
    };
    Ok(FeatureVectorSet { vectors, domain })
}

/// Builds the joint loss of one paired batch. Target samples contribute
/// their observed window only.
pub fn batch_losses(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &TrainConfig,
    source: &[&SequenceSample],
    target: &[&ObservedSample],
) -> Result<StepLosses> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Protocol("empty batch".into()));
    }
    let mut nlls = Vec::with_capacity(source.len());
    let mut src_vectors = Vec::with_capacity(source.len());
    for s in source {
        let (features, head) = forward(tape, bound, cfg, &s.observed())?;
        src_vectors.push(adapt::flatten_features(tape, features, DomainTag::Source)?.vectors);
        let truth = predict::points_to_rows(&s.future_relative())?;
        nlls.push(predict::nll_loss(tape, &head, &truth)?);
    }
    let mut tgt_vectors = Vec::with_capacity(target.len());
    for t in target {
        let features = graph::encode(tape, t, bound, &cfg.graph())?;
        tgt_vectors.push(adapt::flatten_features(tape, features, DomainTag::Target)?.vectors);
    }
    let mut nll_sum = nlls[0];
    for &v in &nlls[1..] {
        nll_sum = tape.add(nll_sum, v)?;
    }
    let prediction = tape.scale(nll_sum, 1.0 / source.len() as f64);
    let src_set = pooled_set(tape, &src_vectors, DomainTag::Source)?;
    let tgt_set = pooled_set(tape, &tgt_vectors, DomainTag::Target)?;
    let alignment = adapt::alignment_loss(tape, &src_set, &tgt_set, bound, &cfg.adapt())?;
    let total = joint_loss(tape, prediction, alignment, cfg.lambda)?;
    Ok(StepLosses {
        prediction,
        alignment,
        total,
    })
}

/// Mean losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l_pre: f64,
    pub l_align: f64,
    pub l: f64,
    pub lr: f64,
}

impl EpochLoss {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.l_pre, self.l_align, self.l, self.lr
        )
    }
}

/// Position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Full training state, enough to resume bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamSet,
    pub adam: AdamState,
    pub rng: RngState,
    pub history: Vec<EpochLoss>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.verify_architecture()?;
        Ok(ckpt)
    }

    /// Checks that parameter names and shapes match the configured model.
    pub fn verify_architecture(&self) -> Result<()> {
        let expected = init_model(&self.config, &mut ChaCha8Rng::seed_from_u64(0));
        let mismatch = expected.len() != self.params.len()
            || expected
                .iter()
                .zip(self.params.iter())
                .any(|((n1, t1), (n2, t2))| n1 != n2 || t1.shape() != t2.shape());
        if mismatch {
            return Err(Error::Checkpoint(
                "parameters do not match the configured architecture".into(),
            ));
        }
        Ok(())
    }
}

/// Owns the mutable state of one training run.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    source: &'a [SequenceSample],
    target: &'a [ObservedSample],
    params: ParamSet,
    adam: AdamState,
    rng: ChaCha8Rng,
    history: Vec<EpochLoss>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: TrainConfig,
        source: &'a [SequenceSample],
        target: &'a [ObservedSample],
    ) -> Result<Self> {
        cfg.validate()?;
        check_inputs(source, target)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = init_model(&cfg, &mut rng);
        let adam = AdamState::new(&params);
        Ok(Self {
            cfg,
            source,
            target,
            params,
            adam,
            rng,
            history: Vec::new(),
        })
    }

    pub fn resume(
        ckpt: Checkpoint,
        source: &'a [SequenceSample],
        target: &'a [ObservedSample],
    ) -> Result<Self> {
        ckpt.config.validate()?;
        ckpt.verify_architecture()?;
        check_inputs(source, target)?;
        if ckpt.history.len() != ckpt.epoch {
            return Err(Error::Checkpoint(
                "loss history length differs from epoch".into(),
            ));
        }
        Ok(Self {
            rng: ckpt.rng.restore(),
            cfg: ckpt.config,
            source,
            target,
            params: ckpt.params,
            adam: ckpt.adam,
            history: ckpt.history,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done() >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            epoch: self.epochs_done(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            rng: RngState::capture(&self.rng),
            history: self.history.clone(),
        }
    }

    /// Runs one epoch and returns its mean losses.
    pub fn run_epoch(&mut self) -> Result<EpochLoss> {
        let epoch = self.epochs_done() + 1;
        let lr = self.cfg.learning_rate(epoch);
        let bs = self.cfg.batch_size;
        let src_batches = shuffled_chunks(self.source.len(), bs, &mut self.rng);
        let tgt_batches = shuffled_chunks(self.target.len(), bs, &mut self.rng);
        let pairs = pair_batches(&src_batches, &tgt_batches, &mut self.rng)?;
        let (mut pre, mut align, mut total) = (0.0, 0.0, 0.0);
        for (step, (sb, tb)) in pairs.iter().enumerate() {
            let context = |e: Error| match e {
                Error::Training(m) => {
                    Error::Training(format!("epoch {epoch}, step {}: {m}", step + 1))
                }
                other => other,
            };
            let (p, a, l) = self.step(sb, tb, lr).map_err(context)?;
            pre += p;
            align += a;
            total += l;
        }
        let n = pairs.len() as f64;
        let record = EpochLoss {
            epoch,
            l_pre: pre / n,
            l_align: align / n,
            l: total / n,
            lr,
        };
        self.history.push(record);
        Ok(record)
    }

    fn step(&mut self, source: &[usize], target: &[usize], lr: f64) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, true);
        let src: Vec<&SequenceSample> = source.iter().map(|&i| &self.source[i]).collect();
        let tgt: Vec<&ObservedSample> = target.iter().map(|&i| &self.target[i]).collect();
        let losses = batch_losses(&mut tape, &bound, &self.cfg, &src, &tgt)?;
        let value = |v: Var| tape.value(v).item();
        let (p, a, l) = (
            value(losses.prediction),
            value(losses.alignment),
            value(losses.total),
        );
        if !l.is_finite() {
            return Err(Error::Training(format!("non-finite loss {l}")));
        }
        let mut grads = tape.backward(losses.total)?;
        let mut grads: Vec<Tensor> = bound.vars().map(|v| grads.take(v)).collect();
        if let Some(max_norm) = self.cfg.grad_clip {
            clip_global_norm(&mut grads, max_norm);
        }
        self.adam.step(&mut self.params, &grads, lr)?;
        Ok((p, a, l))
    }

    /// Trains to completion, writing the log and checkpoints under `out`
    /// when given.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Checkpoint> {
        let log = match out {
            Some(dir) => Some(TrainingLog::open(dir, self.epochs_done() == 0)?),
            None => None,
        };
        while !self.is_finished() {
            let record = self.run_epoch()?;
            log::debug!(
                "epoch {} L_pre {:.5} L_align {:.5}",
                record.epoch,
                record.l_pre,
                record.l_align
            );
            if let (Some(log), Some(dir)) = (&log, out) {
                log.append(&record)?;
                if record.epoch % self.cfg.checkpoint_every == 0 {
                    self.checkpoint()
                        .save(&dir.join(format!("checkpoint_epoch_{:04}.json", record.epoch)))?;
                }
            }
        }
        let ckpt = self.checkpoint();
        if let Some(dir) = out {
            ckpt.save(&dir.join("checkpoint.json"))?;
        }
        Ok(ckpt)
    }
}

fn check_inputs(source: &[SequenceSample], target: &[ObservedSample]) -> Result<()> {
    if source.is_empty() {
        return Err(Error::Protocol("source training samples required".into()));
    }
    if target.is_empty() {
        return Err(Error::Protocol(
            "target observed trajectories required".into(),
        ));
    }
    if let Some(s) = source.iter().find(|s| !s.is_decentralized()) {
        return Err(Error::Contract(format!(
            "source sample with pedestrians {:?} is not decentralized",
            s.ped_ids
        )));
    }
    Ok(())
}

fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}

struct TrainingLog {
    path: PathBuf,
}

impl TrainingLog {
    fn open(dir: &Path, fresh: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("train_log.csv");
        if fresh || !path.exists() {
            fs::write(&path, format!("{LOG_HEADER}\n")).map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self { path })
    }

    fn append(&self, record: &EpochLoss) -> Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{}", record.csv_row()).map_err(|e| Error::io(&self.path, e))
    }
}

/// Source and target directories of one cross-domain task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub source: PathBuf,
    pub target: PathBuf,
    pub out_dir: PathBuf,
}

impl Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.source.display(), self.target.display())
    }
}

/// Loads the source training split and the observed part of the target
/// validation split.
pub fn load_task_data(
    task: &TaskSpec,
    cfg: &TrainConfig,
) -> Result<(Vec<SequenceSample>, Vec<ObservedSample>)> {
    let source = load_split(&task.source, "train", cfg.frame_interval, cfg.window())?;
    let target = load_split(&task.target, "val", cfg.frame_interval, cfg.window())?
        .iter()
        .map(SequenceSample::observed)
        .collect();
    Ok((source, target))
}

/// Trains one task from scratch, writing artifacts to `task.out_dir`.
pub fn train_task(task: &TaskSpec, cfg: &TrainConfig) -> Result<Checkpoint> {
    let (source, target) = load_task_data(task, cfg)?;
    Trainer::new(cfg.clone(), &source, &target)?.run(Some(&task.out_dir))
}
