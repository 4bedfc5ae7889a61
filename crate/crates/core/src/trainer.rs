//! Training and evaluation of the noisy-member detector.
//!
//! Each cluster instance becomes a `k`-token sequence, the encoder scores
//! every token, and a binary cross-entropy loss against the same-label mask
//! drives Adam updates with a cosine learning-rate schedule.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clusterset::{
    fuse_tokens, fuse_tokens_backward, prune_and_link, ClusterInstance, FeatureSet, FusionMode,
};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::pqc::Entangler;
use crate::qtransformer::{sigmoid, Encoder, EncoderConfig, EncoderParams, SharingMode};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Everything needed to rebuild and train a model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    /// Feature dimension `D` of the data the model was built for.
    pub input_dim: usize,
    pub n_qubits: usize,
    pub depth: usize,
    pub blocks: usize,
    pub sharing: SharingMode,
    pub fusion: FusionMode,
    pub entangle: Entangler,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub tau: f64,
    /// Weight on the positive-class BCE term.
    pub pos_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 8,
            input_dim: 16,
            n_qubits: 4,
            depth: 2,
            blocks: 1,
            sharing: SharingMode::Shared,
            fusion: FusionMode::PerPosition,
            entangle: Entangler::Ring,
            learning_rate: 0.02,
            epochs: 12,
            batch_size: 8,
            seed: 7,
            tau: 0.5,
            pos_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            k: self.k,
            input_dim: self.input_dim,
            n_qubits: self.n_qubits,
            depth: self.depth,
            blocks: self.blocks,
            sharing: self.sharing,
            entangle: self.entangle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be ≥ 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and ≥ 0",
                self.learning_rate
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!(
                "tau {} must lie in (0, 1)",
                self.tau
            )));
        }
        if !(self.pos_weight > 0.0 && self.pos_weight.is_finite()) {
            return Err(Error::Config(format!(
                "pos_weight {} must be > 0",
                self.pos_weight
            )));
        }
        self.encoder_config().validate()
    }

    /// `key=value` lines in a fixed key order.
    pub fn to_kv(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("k", self.k.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("n_qubits", self.n_qubits.to_string()),
            ("depth", self.depth.to_string()),
            ("blocks", self.blocks.to_string()),
            ("sharing_mode", self.sharing.to_string()),
            ("fusion_mode", self.fusion.to_string()),
            ("entangler", self.entangle.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("tau", self.tau.to_string()),
            ("pos_weight", self.pos_weight.to_string()),
        ]
    }

    /// Applies recognized keys from `map` on top of `self`; unknown keys are
    /// ignored.
    pub fn apply_kv(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        for (key, v) in map {
            match key.as_str() {
                "k" => self.k = num(key, v)?,
                "input_dim" => self.input_dim = num(key, v)?,
                "n_qubits" => self.n_qubits = num(key, v)?,
                "depth" => self.depth = num(key, v)?,
                "blocks" => self.blocks = num(key, v)?,
                "sharing_mode" => self.sharing = v.parse()?,
                "fusion_mode" => self.fusion = v.parse()?,
                "entangler" => self.entangle = v.parse()?,
                "learning_rate" => self.learning_rate = num(key, v)?,
                "epochs" => self.epochs = num(key, v)?,
                "batch_size" => self.batch_size = num(key, v)?,
                "seed" => self.seed = num(key, v)?,
                "tau" => self.tau = num(key, v)?,
                "pos_weight" => self.pos_weight = num(key, v)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        for (key, _) in Self::default().entries() {
            if !map.contains_key(key) {
                return Err(Error::Config(format!("missing config key {key}")));
            }
        }
        let mut cfg = Self::default();
        cfg.apply_kv(&map)?;
        Ok(cfg)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", no + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Sum of per-token binary cross-entropies, `y` strictly inside `(0, 1)`.
pub fn bce_loss(y: &[f64], target: &[bool]) -> f64 {
    y.iter()
        .zip(target)
        .map(|(&p, &t)| if t { -p.ln() } else { -(1.0 - p).ln() })
        .sum()
}

/// `∂L/∂y_h` of [`bce_loss`].
pub fn bce_grad(y: &[f64], target: &[bool]) -> Vec<f64> {
    y.iter()
        .zip(target)
        .map(|(&p, &t)| if t { -1.0 / p } else { 1.0 / (1.0 - p) })
        .collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// BCE written on logits, with a weight on the positive term. Returns the
/// loss and `∂L/∂logit` per token.
pub fn bce_with_logits(logits: &[f64], target: &[bool], pos_weight: f64) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(target)
        .map(|(&l, &t)| {
            if t {
                loss += pos_weight * softplus(-l);
                pos_weight * (sigmoid(l) - 1.0)
            } else {
                loss += softplus(l);
                sigmoid(l)
            }
        })
        .collect();
    (loss, grad)
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Cosine decay from `base` at step 0 to zero at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Serialized position of a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

/// Model, optimizer and generator state after `epoch` completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: EncoderParams,
    pub epoch: u32,
    pub adam: AdamState,
    pub rng: RngState,
}

impl Checkpoint {
    /// Errors unless the checkpoint was built for `dim`-dimensional features
    /// and `k`-member clusters.
    pub fn check_compatible(&self, dim: usize, k: usize) -> Result<()> {
        if self.config.input_dim != dim {
            return Err(Error::contract(format!(
                "checkpoint expects {}-dimensional features (n_qubits {}), data has {dim}",
                self.config.input_dim, self.config.n_qubits
            )));
        }
        if self.config.k != k {
            return Err(Error::contract(format!(
                "checkpoint expects clusters of {} members, data has {k}",
                self.config.k
            )));
        }
        Ok(())
    }
}

/// Encoder, head and fusion for one configuration.
#[derive(Debug, Clone)]
pub struct Model {
    encoder: Encoder,
    fusion: FusionMode,
    pos_weight: f64,
}

/// Loss and gradient of one instance.
#[derive(Debug, Clone)]
pub struct InstanceGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub qsa_circuit_evals: usize,
}

impl Model {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::new(cfg.encoder_config())?,
            fusion: cfg.fusion,
            pos_weight: cfg.pos_weight,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Per-member probability of sharing the center's label.
    pub fn predict(
        &self,
        params: &EncoderParams,
        features: &FeatureSet,
        c: &ClusterInstance,
    ) -> Result<Vec<f64>> {
        let s = fuse_tokens(c, features, &params.w_e(), self.fusion)?;
        Ok(self.encoder.forward(params, &s)?.y)
    }

    /// Loss and full gradient for one instance.
    pub fn instance_grad(
        &self,
        params: &EncoderParams,
        features: &FeatureSet,
        c: &ClusterInstance,
    ) -> Result<InstanceGrad> {
        let mask = c.mask.as_ref().ok_or_else(|| {
            Error::contract(format!("cluster {} has no ground-truth mask", c.center))
        })?;
        let s = fuse_tokens(c, features, &params.w_e(), self.fusion)?;
        let trace = self.encoder.forward(params, &s)?;
        let (loss, d_logits) = bce_with_logits(&trace.logits, mask, self.pos_weight);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss on cluster {}",
                c.center
            )));
        }
        let (mut grad, ds) = self.encoder.backward(params, &trace, &d_logits)?;
        let dw = fuse_tokens_backward(c, self.fusion, &ds);
        let range = params.layout().get("w_e").expect("w_e").range();
        for (g, d) in grad[range].iter_mut().zip(dw.iter()) {
            *g += d;
        }
        Ok(InstanceGrad {
            loss,
            grad,
            qsa_circuit_evals: trace.qsa_circuit_evals,
        })
    }

    /// Mean loss and mean gradient over `batch`. Instances may be evaluated
    /// concurrently; the reduction always runs in batch order.
    pub fn backward(
        &self,
        params: &EncoderParams,
        features: &FeatureSet,
        batch: &[&ClusterInstance],
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let per: Vec<Result<InstanceGrad>> =
            map_maybe_parallel(batch, |c| self.instance_grad(params, features, c));
        let mut grad = vec![0.0; params.layout().total()];
        let mut loss = 0.0;
        for r in per {
            let g = r?;
            loss += g.loss;
            for (a, b) in grad.iter_mut().zip(&g.grad) {
                *a += b;
            }
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }
}

fn map_maybe_parallel<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub lr: f64,
}

impl std::fmt::Display for LogRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch={} batch={} loss={} lr={}",
            self.epoch, self.batch, self.loss, self.lr
        )
    }
}

/// Side outputs of [`train`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Written after every epoch.
    pub checkpoint_path: Option<PathBuf>,
    /// Receives one [`LogRecord`] line per batch.
    pub log: Option<&'a mut dyn Write>,
    /// Continue from this state instead of initializing.
    pub resume: Option<Checkpoint>,
    /// Stop after this many epochs in total (defaults to `config.epochs`).
    /// The learning-rate schedule still spans `config.epochs`.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Instance-weighted mean loss of every epoch run in this call.
    pub epoch_losses: Vec<f64>,
    pub records: Vec<LogRecord>,
}

/// Fresh checkpoint at epoch 0 for `config`.
pub fn initial_checkpoint(config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = EncoderParams::init(&config.encoder_config(), &mut rng);
    Ok(Checkpoint {
        config: config.clone(),
        adam: AdamState::new(params.layout().total()),
        params,
        epoch: 0,
        rng: RngState::capture(&rng),
    })
}

/// Trains on every cluster instance, shuffled anew each epoch.
///
/// When a batch fails (for example with a non-finite loss) the error is
/// returned and the checkpoint file, if any, still holds the last completed
/// epoch.
pub fn train(
    config: &TrainConfig,
    features: &FeatureSet,
    clusters: &[ClusterInstance],
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if features.labels().is_none() {
        return Err(Error::contract("training requires labeled features"));
    }
    if clusters.is_empty() {
        return Err(Error::contract("no cluster instances to train on"));
    }
    if let Some(c) = clusters.iter().find(|c| c.mask.is_none()) {
        return Err(Error::contract(format!("cluster {} has no mask", c.center)));
    }
    let mut ckpt = match opts.resume.take() {
        Some(c) => {
            if c.config != *config {
                return Err(Error::contract(
                    "resume checkpoint was trained with a different config",
                ));
            }
            c
        }
        None => initial_checkpoint(config)?,
    };
    ckpt.check_compatible(features.dim(), clusters[0].k())?;
    let model = Model::new(config)?;
    let mut rng = ckpt.rng.restore();
    let batches_per_epoch = clusters.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let stop = opts.stop_after.unwrap_or(config.epochs).min(config.epochs);

    let mut epoch_losses = Vec::new();
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    for epoch in ckpt.epoch as usize..stop {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let step = epoch * batches_per_epoch + b;
            let lr = cosine_lr(config.learning_rate, step, total_steps);
            let batch: Vec<&ClusterInstance> = chunk.iter().map(|&i| &clusters[i]).collect();
            let (loss, grad) = model.backward(&ckpt.params, features, &batch)?;
            adam_step(ckpt.params.values_mut(), &grad, &mut ckpt.adam, lr);
            if ckpt.params.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite parameters after epoch {epoch} batch {b}"
                )));
            }
            epoch_loss += loss * chunk.len() as f64;
            let rec = LogRecord {
                epoch,
                batch: b,
                loss,
                lr,
            };
            if let Some(w) = opts.log.as_deref_mut() {
                writeln!(w, "{rec}")?;
            }
            records.push(rec);
        }
        epoch_losses.push(epoch_loss / clusters.len() as f64);
        ckpt.epoch = epoch as u32 + 1;
        ckpt.rng = RngState::capture(&rng);
        if let Some(path) = &opts.checkpoint_path {
            crate::io::write_checkpoint(path, &ckpt)?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        epoch_losses,
        records,
    })
}

/// Scores, assembled clusters and metrics of one evaluation run.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub report: Option<MetricReport>,
}

/// Links clusters from given per-member scores and, when ground truth is
/// available, scores the result.
pub fn evaluate_predictions(
    features: &FeatureSet,
    clusters: &[ClusterInstance],
    predictions: Vec<Vec<f64>>,
    tau: f64,
) -> Result<Evaluation> {
    let labels = prune_and_link(features.len(), clusters, &predictions, tau)?;
    let report = match features.labels() {
        Some(gt) => Some(MetricReport::compute(gt, &labels)?),
        None => None,
    };
    Ok(Evaluation {
        predictions,
        labels,
        report,
    })
}

/// Runs the trained detector on every cluster, links the survivors at `tau`
/// and scores the result.
pub fn evaluate(
    checkpoint: &Checkpoint,
    features: &FeatureSet,
    clusters: &[ClusterInstance],
    tau: f64,
) -> Result<Evaluation> {
    let k = clusters
        .first()
        .map(|c| c.k())
        .unwrap_or(checkpoint.config.k);
    checkpoint.check_compatible(features.dim(), k)?;
    let model = Model::new(&checkpoint.config)?;
    let predictions: Result<Vec<Vec<f64>>> =
        map_maybe_parallel(clusters, |c| model.predict(&checkpoint.params, features, c))
            .into_iter()
            .collect();
    evaluate_predictions(features, clusters, predictions?, tau)
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<u32>,
    pub centroids: ndarray::Array2<f64>,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
}

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's algorithm with k-means++ seeding on the raw feature rows.
pub fn kmeans(features: &FeatureSet, n_clusters: usize, seed: u64) -> Result<KMeansResult> {
    let x = features.features();
    let n = x.nrows();
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::contract(format!(
            "n_clusters {n_clusters} must lie in 1..={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(x.row(i), x.row(chosen[0])))
        .collect();
    while chosen.len() < n_clusters {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // rounding can land on an existing center; fall back to the farthest point
            if d2[pick] == 0.0 {
                pick = (0..n)
                    .max_by(|&a, &b| d2[a].total_cmp(&d2[b]))
                    .expect("n > 0");
            }
            pick
        } else {
            // all remaining points coincide with centers
            (0..n)
                .find(|i| !chosen.contains(i))
                .expect("n_clusters ≤ n")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    let mut centroids = ndarray::Array2::zeros((n_clusters, x.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).assign(&x.row(i));
    }

    let mut labels = vec![0u32; n];
    let mut inertia = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut total = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let (best, d) = (0..n_clusters)
                .map(|c| (c, sq_dist(x.row(i), centroids.row(c))))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("n_clusters ≥ 1");
            *label = best as u32;
            total += d;
        }
        let prev = inertia.last().copied();
        inertia.push(total);
        if let Some(p) = prev {
            if p == 0.0 || (p - total).abs() / p < KMEANS_TOL {
                break;
            }
        }
        let mut sums = ndarray::Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; n_clusters];
        for (i, &label) in labels.iter().enumerate() {
            let c = label as usize;
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &x.row(i);
        }
        for (c, &count) in counts.iter().enumerate() {
            // an empty cluster keeps its previous centroid
            if count > 0 {
                let mean = &sums.row(c) / count as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
    }
    Ok(KMeansResult {
        labels,
        centroids,
        inertia,
    })
}

/// Cluster labels from [`kmeans`].
pub fn kmeans_baseline(features: &FeatureSet, n_clusters: usize, seed: u64) -> Result<Vec<u32>> {
    kmeans(features, n_clusters, seed).map(|r| r.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusterset::knn_clusters;
    use crate::datagen::{synth_blobs, SynthSpec};
    use crate::metrics::pairwise_f;

    #[test]
    fn bce_examples() {
        let y = [0.5; 4];
        let t = [true, false, true, true];
        assert!((bce_loss(&y, &t) - 4.0 * 2f64.ln()).abs() < 1e-12);
        let near = [1.0 - 1e-12, 1e-12, 1.0 - 1e-12, 1.0 - 1e-12];
        assert!(bce_loss(&near, &t) < 1e-10);

        let y = [0.3, 0.8, 0.55, 0.1];
        let g = bce_grad(&y, &t);
        let h = 1e-6;
        for i in 0..4 {
            let mut up = y;
            up[i] += h;
            let mut dn = y;
            dn[i] -= h;
            let fd = (bce_loss(&up, &t) - bce_loss(&dn, &t)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn logit_form_matches_probability_form() {
        let logits = [-2.0, 0.3, 1.7, -0.1];
        let t = [true, false, true, false];
        let y: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
        let (loss, grad) = bce_with_logits(&logits, &t, 1.0);
        assert!((loss - bce_loss(&y, &t)).abs() < 1e-12);
        let dy = bce_grad(&y, &t);
        for i in 0..4 {
            // dL/dl = dL/dy · y(1-y)
            assert!((grad[i] - dy[i] * y[i] * (1.0 - y[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for scale in [1e-3, 1.0, 1e4] {
            let mut p = vec![0.0, 0.0];
            let mut s = AdamState::new(2);
            adam_step(&mut p, &[scale, -scale], &mut s, 0.01);
            assert!((p[0] + 0.01).abs() < 1e-6);
            assert!((p[1] - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_solves_quadratic() {
        let target = 3.5;
        let mut p = vec![-4.0];
        let mut s = AdamState::new(1);
        for _ in 0..500 {
            let g = 2.0 * (p[0] - target);
            adam_step(&mut p, &[g], &mut s, 0.1);
        }
        assert!((p[0] - target).abs() < 1e-3, "{}", p[0]);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert!(cosine_lr(0.1, 10, 10).abs() < 1e-15);
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = TrainConfig {
            learning_rate: 0.0123456789,
            tau: 0.37,
            sharing: SharingMode::SharedQk,
            fusion: FusionMode::Shared,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(TrainConfig::from_kv("k=3\n").is_err());
    }

    #[test]
    fn rng_state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..13 {
            rng.random::<u32>();
        }
        let state = RngState::capture(&rng);
        let mut restored = state.restore();
        for _ in 0..50 {
            assert_eq!(rng.random::<u64>(), restored.random::<u64>());
        }
    }

    fn blobs() -> FeatureSet {
        synth_blobs(&SynthSpec {
            n_classes: 2,
            samples_per_class: 30,
            dim: 6,
            sigma: 0.05,
            min_separation: 1.5,
            seed: 2,
        })
        .unwrap()
    }

    #[test]
    fn kmeans_separates_blobs() {
        let f = blobs();
        let r = kmeans(&f, 2, 1).unwrap();
        let p = pairwise_f(f.labels().unwrap(), &r.labels).unwrap();
        assert_eq!(p.f, 1.0);
        for w in r.inertia.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn kmeans_n_clusters_equals_n() {
        let f = blobs();
        let mut labels = kmeans_baseline(&f, f.len(), 5).unwrap();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), f.len());
    }

    #[test]
    fn batch_gradient_is_mean_of_instances() {
        let f = blobs();
        let cl = knn_clusters(&f, 4).unwrap();
        let cfg = TrainConfig {
            k: 4,
            input_dim: 6,
            n_qubits: 3,
            depth: 1,
            ..TrainConfig::default()
        };
        let model = Model::new(&cfg).unwrap();
        let ckpt = initial_checkpoint(&cfg).unwrap();
        let batch: Vec<&ClusterInstance> = cl.iter().take(3).collect();
        let (loss, grad) = model.backward(&ckpt.params, &f, &batch).unwrap();
        let parts: Vec<InstanceGrad> = batch
            .iter()
            .map(|c| model.instance_grad(&ckpt.params, &f, c).unwrap())
            .collect();
        let mean_loss = parts.iter().map(|p| p.loss).sum::<f64>() / 3.0;
        assert!((loss - mean_loss).abs() < 1e-12);
        for (i, g) in grad.iter().enumerate() {
            let m = parts.iter().map(|p| p.grad[i]).sum::<f64>() / 3.0;
            assert!((g - m).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_freezes_params() {
        let f = blobs();
        let cl = knn_clusters(&f, 4).unwrap();
        let cfg = TrainConfig {
            k: 4,
            input_dim: 6,
            n_qubits: 3,
            depth: 1,
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let start = initial_checkpoint(&cfg).unwrap();
        let out = train(&cfg, &f, &cl, TrainOptions::default()).unwrap();
        assert_eq!(out.checkpoint.params, start.params);
        assert_eq!(out.checkpoint.epoch, 1);
    }

    #[test]
    fn training_needs_masks() {
        let f = blobs();
        let mut cl = knn_clusters(&f, 4).unwrap();
        cl[3].mask = None;
        let cfg = TrainConfig {
            k: 4,
            input_dim: 6,
            n_qubits: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&cfg, &f, &cl, TrainOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn evaluate_rejects_incompatible_checkpoint() {
        let f = blobs();
        let cl = knn_clusters(&f, 4).unwrap();
        let cfg = TrainConfig {
            k: 4,
            input_dim: 16,
            n_qubits: 4,
            ..TrainConfig::default()
        };
        let ckpt = initial_checkpoint(&cfg).unwrap();
        assert!(matches!(
            evaluate(&ckpt, &f, &cl, 0.5),
            Err(Error::Contract(_))
        ));
    }
}
