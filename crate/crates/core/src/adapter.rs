//! Low-rank adapter fine-tuning on the distillation objective.
//!
//! An adapter maps an embedding `e` to `e + (alpha / r) * B (A e)` with
//! `A: r x C` and `B: C x r`. `B` starts at zero so a fresh adapter is the
//! identity. Training alternates discrete tag selection on the adapted
//! embeddings with a gradient step on `L_distill + L_tag`, chaining the
//! closed-form embedding gradients through the adapter.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distill::{grad_with_targets, loss_with_targets, GradientBundle, Reduction, Targets};
use crate::error::{Error, IoError, Result};
use crate::maps::{Embedding, PixelMap};
use crate::par::Exec;
use crate::sample::{Sample, TagEmbedding};
use crate::scoring::{score_candidates, ScoreMethod};
use crate::selection::SelectionMode;
use crate::tensor_io::{read_tensor, write_atomic, write_tensor, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankAdapter {
    channels: usize,
    rank: usize,
    alpha: f64,
    /// `A`, r x C row-major.
    down: Vec<f64>,
    /// `B`, C x r row-major.
    up: Vec<f64>,
}

impl LowRankAdapter {
    /// Gaussian `A` with std `1/sqrt(C)`, zero `B`.
    pub fn new(channels: usize, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        check_hyper(channels, rank, alpha)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (channels as f64).sqrt()).expect("valid std");
        let down = (0..rank * channels).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            channels,
            rank,
            alpha,
            down,
            up: vec![0.0; channels * rank],
        })
    }

    pub fn from_parts(channels: usize, rank: usize, alpha: f64, down: Vec<f64>, up: Vec<f64>) -> Result<Self> {
        check_hyper(channels, rank, alpha)?;
        if down.len() != rank * channels || up.len() != channels * rank {
            return Err(Error::Shape(format!(
                "adapter rank {rank} over {channels} channels needs {0} down and {0} up values, got {1} and {2}",
                rank * channels,
                down.len(),
                up.len()
            )));
        }
        Ok(Self {
            channels,
            rank,
            alpha,
            down,
            up,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn down(&self) -> &[f64] {
        &self.down
    }

    pub fn up(&self) -> &[f64] {
        &self.up
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    fn project(&self, e: &[f64]) -> Vec<f64> {
        self.down
            .chunks_exact(self.channels)
            .map(|row| row.iter().zip(e).map(|(a, x)| a * x).sum())
            .collect()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.channels {
            return Err(Error::Shape(format!(
                "adapter expects {} channels, got {n}",
                self.channels
            )));
        }
        Ok(())
    }

    pub fn apply(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check_len(e.len())?;
        Ok(self.apply_unchecked(e))
    }

    fn apply_unchecked(&self, e: &[f64]) -> Vec<f64> {
        let z = self.project(e);
        let s = self.scale();
        e.iter()
            .zip(self.up.chunks_exact(self.rank))
            .map(|(x, row)| x + s * row.iter().zip(&z).map(|(b, zk)| b * zk).sum::<f64>())
            .collect()
    }

    pub fn apply_embedding(&self, e: &Embedding) -> Result<Embedding> {
        self.apply(e.as_slice()).map(Embedding)
    }

    pub fn apply_pixels(&self, p: &PixelMap) -> Result<PixelMap> {
        self.check_len(p.channels())?;
        Ok(p.map_pixels(|px| self.apply_unchecked(px)))
    }

    /// Accumulates the parameter gradient for one input `e` whose adapted
    /// output received gradient `g`.
    fn accumulate(&self, e: &[f64], g: &[f64], grad: &mut AdapterGrad) {
        let s = self.scale();
        let r = self.rank;
        let z = self.project(e);
        // dB += s * g z^T
        for (c, &gc) in g.iter().enumerate() {
            if gc == 0.0 {
                continue;
            }
            for (d, zk) in grad.d_up[c * r..(c + 1) * r].iter_mut().zip(&z) {
                *d += s * gc * zk;
            }
        }
        // dA += s * (B^T g) e^T
        for k in 0..r {
            let u: f64 = (0..self.channels).map(|c| self.up[c * r + k] * g[c]).sum();
            if u == 0.0 {
                continue;
            }
            let row = &mut grad.d_down[k * self.channels..(k + 1) * self.channels];
            for (d, x) in row.iter_mut().zip(e) {
                *d += s * u * x;
            }
        }
    }

    fn zero_grad(&self) -> AdapterGrad {
        AdapterGrad {
            d_down: vec![0.0; self.down.len()],
            d_up: vec![0.0; self.up.len()],
        }
    }

    /// Plain gradient descent with decoupled weight decay.
    fn step(&mut self, grad: &AdapterGrad, lr: f64, weight_decay: f64) {
        let decay = 1.0 - lr * weight_decay;
        for (p, g) in self.down.iter_mut().zip(&grad.d_down) {
            *p = *p * decay - lr * g;
        }
        for (p, g) in self.up.iter_mut().zip(&grad.d_up) {
            *p = *p * decay - lr * g;
        }
    }

    pub fn down_tensor(&self) -> Tensor {
        to_tensor(vec![self.rank, self.channels], &self.down)
    }

    pub fn up_tensor(&self) -> Tensor {
        to_tensor(vec![self.channels, self.rank], &self.up)
    }
}

fn to_tensor(dims: Vec<usize>, v: &[f64]) -> Tensor {
    Tensor::new(dims, v.iter().map(|&x| x as f32).collect()).expect("finite adapter weights")
}

fn check_hyper(channels: usize, rank: usize, alpha: f64) -> Result<()> {
    if channels == 0 || rank == 0 {
        return Err(Error::Config(format!(
            "adapter needs positive channels and rank, got {channels} and {rank}"
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("adapter alpha must be > 0, got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrad {
    pub d_down: Vec<f64>,
    pub d_up: Vec<f64>,
}

impl AdapterGrad {
    fn add(&mut self, other: &AdapterGrad) {
        for (a, b) in self.d_down.iter_mut().zip(&other.d_down) {
            *a += b;
        }
        for (a, b) in self.d_up.iter_mut().zip(&other.d_up) {
            *a += b;
        }
    }

    fn scale(&mut self, k: f64) {
        self.d_down.iter_mut().chain(self.d_up.iter_mut()).for_each(|v| *v *= k);
    }

    fn is_finite(&self) -> bool {
        self.d_down.iter().chain(&self.d_up).all(|v| v.is_finite())
    }
}

/// Whether pixel and text/tag embeddings share one adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterSharing {
    #[default]
    Shared,
    PerBranch,
}

/// The adapters applied to the image branch and the text branch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet {
    pub image: LowRankAdapter,
    /// `None` when the text branch shares the image adapter.
    pub text: Option<LowRankAdapter>,
}

impl AdapterSet {
    pub fn shared(adapter: LowRankAdapter) -> Self {
        Self {
            image: adapter,
            text: None,
        }
    }

    pub fn init(channels: usize, config: &TrainConfig) -> Result<Self> {
        let image = LowRankAdapter::new(channels, config.rank, config.alpha, config.seed)?;
        let text = match config.sharing {
            AdapterSharing::Shared => None,
            AdapterSharing::PerBranch => Some(LowRankAdapter::new(
                channels,
                config.rank,
                config.alpha,
                config.seed.wrapping_add(1),
            )?),
        };
        Ok(Self { image, text })
    }

    pub fn text_adapter(&self) -> &LowRankAdapter {
        self.text.as_ref().unwrap_or(&self.image)
    }

    pub fn apply_sample(&self, sample: &Sample) -> Result<Sample> {
        let t = self.text_adapter();
        Ok(Sample {
            pixels: self.image.apply_pixels(&sample.pixels)?,
            text_embedding: t.apply_embedding(&sample.text_embedding)?,
            candidates: sample
                .candidates
                .iter()
                .map(|c| Ok(TagEmbedding::new(c.tag.clone(), t.apply_embedding(&c.embedding)?)))
                .collect::<Result<_>>()?,
            ..sample.clone()
        })
    }

    /// All parameters, image adapter first (`A` then `B`), then the text adapter.
    pub fn params(&self) -> Vec<f64> {
        let mut v = [self.image.down.as_slice(), self.image.up.as_slice()].concat();
        if let Some(t) = &self.text {
            v.extend_from_slice(&t.down);
            v.extend_from_slice(&t.up);
        }
        v
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().expect("param count"));
        fill(&mut self.image.down);
        fill(&mut self.image.up);
        if let Some(t) = &mut self.text {
            fill(&mut t.down);
            fill(&mut t.up);
        }
    }

    fn zero_grad(&self) -> AdapterSetGrad {
        AdapterSetGrad {
            image: self.image.zero_grad(),
            text: self.text.as_ref().map(LowRankAdapter::zero_grad),
        }
    }

    fn step(&mut self, grad: &AdapterSetGrad, lr: f64, weight_decay: f64) {
        self.image.step(&grad.image, lr, weight_decay);
        if let (Some(t), Some(g)) = (&mut self.text, &grad.text) {
            t.step(g, lr, weight_decay);
        }
    }

    /// Chains embedding gradients of one (unadapted) sample into parameter gradients.
    fn backprop(&self, sample: &Sample, g: &GradientBundle) -> AdapterSetGrad {
        let mut out = self.zero_grad();
        for i in 0..sample.pixels.len() {
            self.image
                .accumulate(sample.pixels.pixel(i), g.d_pixels.pixel(i), &mut out.image);
        }
        let (adapter, grad) = match (&self.text, &mut out.text) {
            (Some(t), Some(gt)) => (t, gt),
            _ => (&self.image, &mut out.image),
        };
        adapter.accumulate(sample.text_embedding.as_slice(), g.d_text.as_slice(), grad);
        for (c, (_, gt)) in sample.candidates.iter().zip(&g.d_tags) {
            adapter.accumulate(c.embedding.as_slice(), gt.as_slice(), grad);
        }
        out
    }

    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        write_tensor(&self.image.down_tensor(), &dir.join("adapter.down.ttdt"))?;
        write_tensor(&self.image.up_tensor(), &dir.join("adapter.up.ttdt"))?;
        if let Some(t) = &self.text {
            write_tensor(&t.down_tensor(), &dir.join("adapter.text.down.ttdt"))?;
            write_tensor(&t.up_tensor(), &dir.join("adapter.text.up.ttdt"))?;
        }
        let meta = CheckpointMeta {
            rank: self.image.rank,
            alpha: self.image.alpha,
            channels: self.image.channels,
            sharing: if self.text.is_some() {
                AdapterSharing::PerBranch
            } else {
                AdapterSharing::Shared
            },
            config_hash: config_hash.to_string(),
        };
        let mut json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        json.push('\n');
        write_atomic(&dir.join("adapter.json"), json.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("adapter.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| IoError::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| IoError::Parse {
            path: meta_path.clone(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let load = |prefix: &str| -> Result<LowRankAdapter> {
            let down = read_tensor(&dir.join(format!("{prefix}.down.ttdt")))?;
            let up = read_tensor(&dir.join(format!("{prefix}.up.ttdt")))?;
            if down.dims() != [meta.rank, meta.channels] || up.dims() != [meta.channels, meta.rank] {
                return Err(Error::Shape(format!(
                    "checkpoint {prefix} tensors {:?}/{:?} disagree with rank {} over {} channels",
                    down.dims(),
                    up.dims(),
                    meta.rank,
                    meta.channels
                )));
            }
            let f = |t: Tensor| t.into_data().into_iter().map(f64::from).collect();
            LowRankAdapter::from_parts(meta.channels, meta.rank, meta.alpha, f(down), f(up))
        };
        let image = load("adapter")?;
        let text = match meta.sharing {
            AdapterSharing::Shared => None,
            AdapterSharing::PerBranch => Some(load("adapter.text")?),
        };
        Ok(Self { image, text })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub rank: usize,
    pub alpha: f64,
    pub channels: usize,
    pub sharing: AdapterSharing,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSetGrad {
    pub image: AdapterGrad,
    pub text: Option<AdapterGrad>,
}

impl AdapterSetGrad {
    fn add(&mut self, other: &AdapterSetGrad) {
        self.image.add(&other.image);
        if let (Some(a), Some(b)) = (&mut self.text, &other.text) {
            a.add(b);
        }
    }

    fn scale(&mut self, k: f64) {
        self.image.scale(k);
        if let Some(t) = &mut self.text {
            t.scale(k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.image.is_finite() && self.text.as_ref().is_none_or(AdapterGrad::is_finite)
    }

    /// Same layout as [`AdapterSet::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = [self.image.d_down.as_slice(), self.image.d_up.as_slice()].concat();
        if let Some(t) = &self.text {
            v.extend_from_slice(&t.d_down);
            v.extend_from_slice(&t.d_up);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub selection_mode: SelectionMode,
    /// Scorer feeding tag selection.
    pub score_method: ScoreMethod,
    pub loss_reduction: Reduction,
    /// How per-sample losses and gradients combine within a batch.
    pub batch_reduction: Reduction,
    pub rank: usize,
    pub alpha: f64,
    pub sharing: AdapterSharing,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 5e-5,
            epochs: 1,
            batch_size: 32,
            seed: 0,
            selection_mode: SelectionMode::Gap,
            score_method: ScoreMethod::Pixel,
            loss_reduction: Reduction::Sum,
            batch_reduction: Reduction::Sum,
            rank: 4,
            alpha: 1.0,
            sharing: AdapterSharing::Shared,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is allowed: it runs the loop without moving.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        check_hyper(1, self.rank, self.alpha)
    }

    /// Canonical JSON used for checkpoint sidecars and hashing.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "selection_mode": self.selection_mode.to_string(),
            "score_method": self.score_method.as_str(),
            "loss_reduction": self.loss_reduction.as_str(),
            "batch_reduction": self.batch_reduction.as_str(),
            "rank": self.rank,
            "alpha": self.alpha,
            "sharing": self.sharing,
        })
    }
}

/// Loss of one batch, combined over samples per the batch reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub l_distill: f64,
    pub l_tag: f64,
    pub total: f64,
}

impl BatchLoss {
    pub fn is_finite(&self) -> bool {
        self.l_distill.is_finite() && self.l_tag.is_finite() && self.total.is_finite()
    }
}

/// Selects pseudo-tags on adapted embeddings and freezes the resulting
/// targets, one per sample.
pub fn prepare_targets(model: &AdapterSet, batch: &[Sample], config: &TrainConfig, exec: Exec) -> Result<Vec<Targets>> {
    exec.try_map(batch, |s| {
        let adapted = model.apply_sample(s)?;
        let scores = score_candidates(
            &adapted.pixels,
            &adapted.text_embedding,
            &adapted.candidates,
            config.score_method,
        )?;
        let selected = if adapted.candidates.is_empty() {
            Vec::new()
        } else {
            config.selection_mode.apply(&scores)?.selected
        };
        Targets::compute(&adapted.pixels, &adapted.candidates, &selected)
    })
}

fn check_targets(batch: &[Sample], targets: &[Targets]) -> Result<()> {
    if batch.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} target sets for {} samples",
            targets.len(),
            batch.len()
        )));
    }
    Ok(())
}

fn batch_scale(reduction: Reduction, n: usize) -> f64 {
    match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / n.max(1) as f64,
    }
}

fn combine_losses(reports: &[(f64, f64)], reduction: Reduction) -> BatchLoss {
    let k = batch_scale(reduction, reports.len());
    let (d, t) = reports.iter().fold((0.0, 0.0), |(d, t), (a, b)| (d + a, t + b));
    BatchLoss {
        l_distill: d * k,
        l_tag: t * k,
        total: (d + t) * k,
    }
}

/// Loss of the adapted batch against frozen targets.
pub fn batch_loss(
    model: &AdapterSet,
    batch: &[Sample],
    targets: &[Targets],
    config: &TrainConfig,
    exec: Exec,
) -> Result<BatchLoss> {
    check_targets(batch, targets)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let parts = exec.try_map(&idx, |&i| {
        let a = model.apply_sample(&batch[i])?;
        let r = loss_with_targets(
            &a.pixels,
            Some(&a.text_embedding),
            &a.candidates,
            &targets[i],
            config.loss_reduction,
        )?;
        Ok::<_, Error>((r.l_distill, r.l_tag))
    })?;
    Ok(combine_losses(&parts, config.batch_reduction))
}

/// Batch loss and its gradient with respect to the adapter parameters.
///
/// Per-sample work may run in parallel; the reduction is a left-to-right sum.
pub fn batch_gradient(
    model: &AdapterSet,
    batch: &[Sample],
    targets: &[Targets],
    config: &TrainConfig,
    exec: Exec,
) -> Result<(BatchLoss, AdapterSetGrad)> {
    check_targets(batch, targets)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let parts = exec.try_map(&idx, |&i| {
        let a = model.apply_sample(&batch[i])?;
        let r = loss_with_targets(
            &a.pixels,
            Some(&a.text_embedding),
            &a.candidates,
            &targets[i],
            config.loss_reduction,
        )?;
        let g = grad_with_targets(
            &a.pixels,
            &a.text_embedding,
            &a.candidates,
            &targets[i],
            config.loss_reduction,
        )?;
        Ok::<_, Error>(((r.l_distill, r.l_tag), model.backprop(&batch[i], &g)))
    })?;
    let mut grad = model.zero_grad();
    for (_, g) in &parts {
        grad.add(g);
    }
    grad.scale(batch_scale(config.batch_reduction, batch.len()));
    let losses: Vec<(f64, f64)> = parts.iter().map(|(l, _)| *l).collect();
    Ok((combine_losses(&losses, config.batch_reduction), grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_distill: f64,
    pub l_tag: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub adapter: AdapterSet,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,l_distill,l_tag,total\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e}\n",
                r.step, r.l_distill, r.l_tag, r.total
            ));
        }
        out
    }
}

/// Runs gradient descent on the adapter from a fresh initialization.
pub fn train(samples: &[Sample], config: &TrainConfig, exec: Exec) -> Result<TrainLog> {
    config.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyInput("training needs at least one sample".into()))?;
    let model = AdapterSet::init(first.pixels.channels(), config)?;
    train_from(model, samples, config, exec)
}

/// Like [`train`] but starting from the given adapters.
pub fn train_from(mut model: AdapterSet, samples: &[Sample], config: &TrainConfig, exec: Exec) -> Result<TrainLog> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("training needs at least one sample".into()));
    }
    let mut records = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        for batch in samples.chunks(config.batch_size) {
            let targets = prepare_targets(&model, batch, config, exec)?;
            let (loss, grad) = batch_gradient(&model, batch, &targets, config, exec)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence { step });
            }
            records.push(StepRecord {
                step,
                epoch,
                l_distill: loss.l_distill,
                l_tag: loss.l_tag,
                total: loss.total,
            });
            model.step(&grad, config.learning_rate, config.weight_decay);
            step += 1;
        }
    }
    Ok(TrainLog {
        records,
        adapter: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_adapter_is_identity() {
        let a = LowRankAdapter::new(5, 2, 1.0, 3).unwrap();
        let e = [0.3, -1.0, 2.0, 0.0, 0.5];
        assert_eq!(a.apply(&e).unwrap(), e.to_vec());
        assert!(matches!(a.apply(&e[..4]), Err(Error::Shape(_))));
    }

    #[test]
    fn rank_one_update_by_hand() {
        // A selects coordinate 0, B writes into coordinate 2
        let down = vec![1.0, 0.0, 0.0];
        let up = vec![0.0, 0.0, 2.0];
        let a = LowRankAdapter::from_parts(3, 1, 1.0, down, up).unwrap();
        assert_eq!(a.apply(&[3.0, 1.0, 1.0]).unwrap(), vec![3.0, 1.0, 7.0]);
        let a = LowRankAdapter::from_parts(3, 1, 0.5, vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0]).unwrap();
        assert_eq!(a.apply(&[3.0, 1.0, 1.0]).unwrap(), vec![3.0, 1.0, 4.0]);
    }

    #[test]
    fn bad_hyperparameters() {
        assert!(LowRankAdapter::new(4, 0, 1.0, 0).is_err());
        assert!(LowRankAdapter::new(4, 2, 0.0, 0).is_err());
        assert!(LowRankAdapter::from_parts(2, 1, 1.0, vec![1.0], vec![1.0, 1.0]).is_err());
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn params_round_trip() {
        let cfg = TrainConfig {
            sharing: AdapterSharing::PerBranch,
            ..TrainConfig::default()
        };
        let mut m = AdapterSet::init(3, &cfg).unwrap();
        let p: Vec<f64> = (0..m.params().len()).map(|i| i as f64).collect();
        m.set_params(&p);
        assert_eq!(m.params(), p);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = AdapterSet::init(3, &TrainConfig::default()).unwrap();
        let p: Vec<f64> = (0..m.params().len()).map(|i| i as f64 * 0.25).collect();
        m.set_params(&p);
        m.save(dir.path(), "abc").unwrap();
        assert_eq!(AdapterSet::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(matches!(
            train(&[], &TrainConfig::default(), Exec::Sequential),
            Err(Error::EmptyInput(_))
        ));
    }
}
