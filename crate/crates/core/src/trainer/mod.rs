//! Optimisation loops: encoder pretraining, (adversarial) generator training,
//! fine-tuning, checkpoints and the experiment matrix.

mod adam;
mod checkpoint;
mod matrix;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{check_layout, ModelCheckpoint, StoredTensor, FORMAT_VERSION, MANIFEST_FILE};
pub use matrix::{run_experiment_matrix, Encoders, ExperimentConfig, ExperimentReport, ExperimentRow};

use crate::data::{bicubic_resize, Dataset, PatchPair};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{
    critic_loss, generator_adv_loss, mse_loss, perceptual_loss, sample_epsilon, total_generator_loss, FrozenEncoder,
    LossConfig, LossParts, Term,
};
use crate::manifest::Manifest;
use crate::metrics::{psnr, ssim, SsimConfig};
use crate::networks::{
    Critic, CriticConfig, Decoder, Generator, GeneratorConfig, PerceptualEncoder, PerceptualEncoderConfig, PipelineMode,
};
use crate::nn::{backward, no_grad, stream_seed, ParamSet, Tensor};

pub const KIND_GENERATOR: &str = "generator";
pub const KIND_ENCODER: &str = "encoder";
pub const LOG_FILE: &str = "train_log.jsonl";
/// Validation rounds without improvement before pretraining stops.
pub const PRETRAIN_PATIENCE: usize = 3;

/// Everything a training run needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch: usize,
    pub loss: LossConfig,
    pub seed: u64,
    /// Halve (by `lr_decay_factor`) every this many epochs; 0 disables.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Cap on the total number of generator (or encoder) updates.
    pub max_steps: Option<usize>,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub encoder: PerceptualEncoderConfig,
    pub ssim: SsimConfig,
    /// Where checkpoints and the training log go. Not part of the manifest.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 180,
            batch: 16,
            loss: LossConfig::default(),
            seed: 0,
            lr_decay_every: 60,
            lr_decay_factor: 0.5,
            checkpoint_every: 10,
            max_steps: None,
            generator: GeneratorConfig::default(),
            critic: CriticConfig::default(),
            encoder: PerceptualEncoderConfig::default(),
            ssim: SsimConfig::default(),
            out_dir: None,
        }
    }
}

fn parse_steps(raw: Option<&str>) -> Result<Option<usize>> {
    match raw {
        None | Some("none") => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|e| Error::InvalidConfig(format!("bad value `{v}` for `max_steps`: {e}"))),
    }
}

impl TrainConfig {
    /// Defaults with the generator and critic families the variant calls for.
    pub fn for_variant(variant: crate::losses::Variant) -> Self {
        let mut cfg = TrainConfig::default();
        cfg.set_variant(variant);
        cfg
    }

    pub fn set_variant(&mut self, variant: crate::losses::Variant) {
        self.loss.variant = variant;
        self.generator.attention = variant.uses_attention();
        self.critic.attention = variant.uses_attention();
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.loss.validate()?;
        self.generator.validate()?;
        self.critic.validate()?;
        self.ssim.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be at least 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_decay_factor must lie in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = if self.lr_decay_every == 0 { 0 } else { epoch / self.lr_decay_every };
        self.adam.lr * self.lr_decay_factor.powi(drops as i32)
    }

    /// The `train` section: optimiser and schedule.
    pub fn to_manifest(&self) -> Manifest {
        let mut m = self.adam.to_manifest();
        m.set("epochs", self.epochs);
        m.set("batch", self.batch);
        m.set("seed", self.seed);
        m.set("lr_decay_every", self.lr_decay_every);
        m.set("lr_decay_factor", self.lr_decay_factor);
        m.set("checkpoint_every", self.checkpoint_every);
        match self.max_steps {
            Some(n) => m.set("max_steps", n),
            None => m.set("max_steps", "none"),
        }
        m
    }

    /// Every section, nested under its name.
    pub fn run_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.nest("train", &self.to_manifest());
        m.nest("loss", &self.loss.to_manifest());
        m.nest("generator", &self.generator.to_manifest());
        m.nest("critic", &self.critic.to_manifest());
        m.nest("encoder", &self.encoder.to_manifest());
        m.nest("metrics", &self.ssim.to_manifest());
        m
    }

    /// Inverse of [`TrainConfig::run_manifest`]. Missing keys take their
    /// defaults; the attention flags default to what the variant uses.
    pub fn from_run_manifest(m: &Manifest) -> Result<Self> {
        let d = TrainConfig::default();
        let t = m.section("train");
        let loss = LossConfig::from_manifest(&m.section("loss"))?;
        let mut g = m.section("generator");
        if g.get("attention").is_none() {
            g.set("attention", loss.variant.uses_attention());
        }
        let mut c = m.section("critic");
        if c.get("attention").is_none() {
            c.set("attention", loss.variant.uses_attention());
        }
        let cfg = TrainConfig {
            adam: AdamConfig::from_manifest(&t)?,
            epochs: t.parse_or("epochs", d.epochs)?,
            batch: t.parse_or("batch", d.batch)?,
            loss,
            seed: t.parse_or("seed", d.seed)?,
            lr_decay_every: t.parse_or("lr_decay_every", d.lr_decay_every)?,
            lr_decay_factor: t.parse_or("lr_decay_factor", d.lr_decay_factor)?,
            checkpoint_every: t.parse_or("checkpoint_every", d.checkpoint_every)?,
            max_steps: parse_steps(t.get("max_steps"))?,
            generator: GeneratorConfig::from_manifest(&g)?,
            critic: CriticConfig::from_manifest(&c)?,
            encoder: PerceptualEncoderConfig::from_manifest(&m.section("encoder"))?,
            ssim: SsimConfig::from_manifest(&m.section("metrics"))?,
            out_dir: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub generator_loss: Option<f64>,
    pub adversarial: Option<f64>,
    pub perceptual: Option<f64>,
    pub vgg: Option<f64>,
    pub critic_loss: Option<f64>,
    pub wasserstein_estimate: Option<f64>,
    pub gradient_penalty: Option<f64>,
    pub reconstruction_mse: Option<f64>,
    pub wall_seconds: f64,
}

impl LogRecord {
    pub fn to_json(&self) -> Value {
        json!({
            "record": "step",
            "step": self.step,
            "epoch": self.epoch,
            "generator_loss": self.generator_loss,
            "adversarial": self.adversarial,
            "perceptual": self.perceptual,
            "vgg": self.vgg,
            "critic_loss": self.critic_loss,
            "wasserstein_estimate": self.wasserstein_estimate,
            "gradient_penalty": self.gradient_penalty,
            "reconstruction_mse": self.reconstruction_mse,
            "wall_seconds": self.wall_seconds,
        })
    }
}

/// Full-pipeline quality on the validation pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    pub step: usize,
    pub epoch: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
}

impl Validation {
    pub fn to_json(&self) -> Value {
        json!({
            "record": "validation",
            "step": self.step,
            "epoch": self.epoch,
            "psnr_db": self.psnr,
            "ssim": self.ssim,
            "bicubic_psnr_db": self.bicubic_psnr,
            "bicubic_ssim": self.bicubic_ssim,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<LogRecord>,
    pub validation: Vec<Validation>,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<LogRecord>,
    /// Validation reconstruction MSE after each epoch.
    pub val_mse: Vec<f64>,
    pub early_stopped: bool,
}

/// Stacks single-channel images into `[B, 1, H, W]`.
pub fn batch_tensor(images: &[&Image]) -> Result<Tensor<f32>> {
    let (h, w) = images
        .first()
        .map(|i| i.shape())
        .ok_or_else(|| Error::EmptyDataset("empty batch".into()))?;
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.shape() != (h, w) {
            return Err(Error::ShapeMismatch(format!("batch mixes {:?} and {:?}", (h, w), img.shape())));
        }
        data.extend_from_slice(img.pixels());
    }
    Ok(Tensor::constant(data, &[images.len(), 1, h, w]))
}

/// Generator input, output and reconstruction for a batch of pairs.
fn super_resolve(gen: &Generator, params: &ParamSet<f32>, lr: &Tensor<f32>) -> Result<Tensor<f32>> {
    gen.forward(&lr.haar_dwt()?, params)?.haar_idwt()
}

/// Indices of a critic batch and its mixing weights, drawn from a stream
/// keyed by the generator step and the critic iteration.
pub fn critic_draw(seed: u64, step: usize, iter: usize, n: usize, batch: usize) -> (Vec<usize>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("critic/{step}/{iter}")));
    let idx = (0..batch).map(|_| rng.gen_range(0..n)).collect();
    let eps = sample_epsilon(&mut rng, batch);
    (idx, eps)
}

/// Training sample indices of the `i`-th batch of `epoch`.
pub fn epoch_batch(seed: u64, epoch: usize, i: usize, n: usize, batch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("epoch/{epoch}"))));
    (0..batch).map(|j| order[(i * batch + j) % n]).collect()
}

fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch).max(1)
}

fn finite(v: f64, step: usize, what: &str, last: &Option<PathBuf>) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            step,
            detail: format!("{what} is {v}"),
            last_checkpoint: last.clone(),
        })
    }
}

/// The bicubic reconstruction of a pair at hr size.
pub fn bicubic_baseline(pair: &PatchPair) -> Result<Image> {
    match pair.mode {
        PipelineMode::PreInterpolated => Ok(pair.lr.clone()),
        PipelineMode::Progressive => bicubic_resize(&pair.lr, pair.hr.height(), pair.hr.width()),
    }
}

/// Mean PSNR/SSIM of the full pipeline and of the bicubic baseline.
pub fn evaluate_generator(
    gen: &Generator,
    params: &ParamSet<f32>,
    pairs: &[PatchPair],
    ssim_cfg: &SsimConfig,
) -> Result<(f64, f64, f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no validation pairs".into()));
    }
    let (mut p, mut s, mut bp, mut bs) = (0.0, 0.0, 0.0, 0.0);
    for pair in pairs {
        let sr = gen.enhance(&pair.lr, params)?;
        let base = bicubic_baseline(pair)?;
        p += psnr(&sr, &pair.hr)?;
        s += ssim(&sr, &pair.hr, ssim_cfg)?;
        bp += psnr(&base, &pair.hr)?;
        bs += ssim(&base, &pair.hr, ssim_cfg)?;
    }
    let n = pairs.len() as f64;
    Ok((p / n, s / n, bp / n, bs / n))
}

/// Super-resolves a raw low-resolution image by the generator's scale.
/// In pre-interpolated mode the input is bicubic-upsampled first. The
/// result is clipped to the input's range.
pub fn upscale_image(gen: &Generator, params: &ParamSet<f32>, lr: &Image) -> Result<Image> {
    let cfg = gen.config();
    let input = match cfg.mode {
        PipelineMode::PreInterpolated => bicubic_resize(lr, lr.height() * cfg.scale, lr.width() * cfg.scale)?,
        PipelineMode::Progressive => lr.clone(),
    };
    let out = gen.enhance(&input, params)?;
    let (h, w) = out.shape();
    let range = out.range();
    Image::clamped(h, w, out.into_pixels(), range)
}

struct LogSink {
    file: Option<BufWriter<File>>,
}

impl LogSink {
    fn open(out: &Option<PathBuf>, append: bool) -> Result<Self> {
        let file = match out {
            None => None,
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let f = fs::OpenOptions::new()
                    .create(true)
                    .append(append)
                    .write(true)
                    .truncate(!append)
                    .open(dir.join(LOG_FILE))?;
                Some(BufWriter::new(f))
            }
        };
        Ok(LogSink { file })
    }

    fn write(&mut self, v: &Value) -> Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{v}")?;
            f.flush()?;
        }
        Ok(())
    }
}

/// Loads a frozen encoder from an encoder checkpoint or from the encoder
/// tensors of a generator checkpoint.
pub fn load_encoder(ck: &ModelCheckpoint) -> Result<FrozenEncoder<f32>> {
    let cfg = PerceptualEncoderConfig::from_manifest(&ck.manifest.section("encoder"))?;
    let enc = PerceptualEncoder::new(cfg);
    let ps = ck.params("encoder")?;
    check_layout(&enc.init::<f32>(0), &ps, "encoder")?;
    Ok(FrozenEncoder::new(enc, ps))
}

/// The generator and its weights from a generator checkpoint.
pub fn load_generator(ck: &ModelCheckpoint) -> Result<(Generator, ParamSet<f32>)> {
    if ck.manifest.get("kind") != Some(KIND_GENERATOR) {
        return Err(Error::ArchitectureMismatch(format!(
            "expected a generator checkpoint, found kind `{}`",
            ck.manifest.get("kind").unwrap_or("none")
        )));
    }
    let gen = Generator::new(GeneratorConfig::from_manifest(&ck.manifest.section("generator"))?)?;
    let ps = ck.params("generator")?;
    check_layout(&gen.init::<f32>(0), &ps, "generator")?;
    Ok((gen, ps))
}

fn describe_mismatch(what: &str, expected: &Manifest, got: &Manifest) -> String {
    let diffs: Vec<String> = expected
        .iter()
        .filter(|(k, v)| got.get(k) != Some(v))
        .map(|(k, v)| format!("{k} {} vs {v}", got.get(k).unwrap_or("missing")))
        .collect();
    format!("{what} checkpoint/config differ: {}", diffs.join(", "))
}

/// Pretrains the perceptual encoder as the front half of an autoencoder
/// with MSE reconstruction on the high-resolution patches. Validation runs
/// after every epoch; training stops once the validation MSE has not
/// improved for [`PRETRAIN_PATIENCE`] evaluations, and the best epoch's
/// encoder is returned.
pub fn pretrain_perceptual(dataset: &Dataset, cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.adam.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset("no training patches for encoder pretraining".into()));
    }
    let enc = PerceptualEncoder::new(cfg.encoder.clone());
    let dec = Decoder::mirror(&cfg.encoder);
    let mut eps = enc.init::<f32>(stream_seed(cfg.seed, "encoder"));
    let mut dps = dec.init::<f32>(stream_seed(cfg.seed, "decoder"));
    let (mut ea, mut da) = (AdamState::new(), AdamState::new());
    let val: Vec<&Image> = if dataset.val.is_empty() {
        dataset.train.iter().map(|p| &p.hr).collect()
    } else {
        dataset.val.iter().map(|p| &p.hr).collect()
    };
    let val_t = batch_tensor(&val)?;
    let n = dataset.train.len();
    let spe = steps_per_epoch(n, cfg.batch);
    let total = (cfg.epochs * spe).min(cfg.max_steps.unwrap_or(usize::MAX));
    let mut sink = LogSink::open(&cfg.out_dir, false)?;
    let start = Instant::now();
    let (mut log, mut val_mse) = (Vec::new(), Vec::new());
    let mut best = eps.clone();
    let (mut best_mse, mut stale) = (f64::INFINITY, 0);
    let mut early_stopped = false;
    let last = None;
    let val_loss = |eps: &ParamSet<f32>, dps: &ParamSet<f32>| -> Result<f64> {
        no_grad(|| {
            let z = enc.forward(&val_t, eps)?;
            Ok(mse_loss(&dec.forward(&z, dps)?, &val_t)?.item() as f64)
        })
    };
    for step in 0..total {
        let epoch = step / spe;
        let idx = epoch_batch(cfg.seed, epoch, step % spe, n, cfg.batch);
        let x = batch_tensor(&idx.iter().map(|&i| &dataset.train[i].hr).collect::<Vec<_>>())?;
        let loss = mse_loss(&dec.forward(&enc.forward(&x, &eps)?, &dps)?, &x)?;
        let lv = finite(loss.item() as f64, step, "reconstruction loss", &last)?;
        backward(&loss, &mut eps)?;
        backward(&loss, &mut dps)?;
        let lr = cfg.lr_at(epoch);
        adam_step(&mut eps, &mut ea, &cfg.adam, lr)?;
        adam_step(&mut dps, &mut da, &cfg.adam, lr)?;
        let rec = LogRecord {
            step,
            epoch,
            reconstruction_mse: Some(lv),
            wall_seconds: start.elapsed().as_secs_f64(),
            ..Default::default()
        };
        sink.write(&rec.to_json())?;
        log.push(rec);
        if (step + 1) % spe == 0 || step + 1 == total {
            let v = finite(val_loss(&eps, &dps)?, step, "validation loss", &last)?;
            sink.write(&json!({"record": "validation", "step": step + 1, "epoch": epoch, "reconstruction_mse": v}))?;
            val_mse.push(v);
            if v < best_mse {
                best_mse = v;
                best = eps.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= PRETRAIN_PATIENCE {
                    early_stopped = true;
                    break;
                }
            }
        }
    }
    let mut m = Manifest::new();
    m.set("kind", KIND_ENCODER);
    m.set("seed", cfg.seed);
    m.set("steps", log.len());
    m.nest("encoder", &cfg.encoder.to_manifest());
    m.nest("train", &cfg.to_manifest());
    if best_mse.is_finite() {
        m.set("history.val_reconstruction_mse", best_mse);
    }
    m.set("history.early_stopped", early_stopped);
    let mut ck = ModelCheckpoint::new(m);
    ck.insert_params("encoder", &best);
    if let Some(dir) = &cfg.out_dir {
        ck.save(&dir.join("final"))?;
    }
    Ok(PretrainOutcome {
        checkpoint: ck,
        log,
        val_mse,
        early_stopped,
    })
}

/// Where a run starts from.
struct Start {
    gen: ParamSet<f32>,
    critic: Option<ParamSet<f32>>,
    encoder: Option<FrozenEncoder<f32>>,
    gen_adam: AdamState<f32>,
    critic_adam: AdamState<f32>,
    step: usize,
    lineage: Option<String>,
    append_log: bool,
}

struct Models {
    gen: Generator,
    critic: Option<Critic>,
}

fn build_models(cfg: &TrainConfig) -> Result<Models> {
    let gen = Generator::new(cfg.generator.clone())?;
    let critic = cfg.loss.variant.is_adversarial().then(|| Critic::new(cfg.critic.clone())).transpose()?;
    Ok(Models { gen, critic })
}

fn pick_encoder(cfg: &TrainConfig, from_ck: Option<&ModelCheckpoint>, supplied: Option<&ModelCheckpoint>) -> Result<Option<FrozenEncoder<f32>>> {
    if !cfg.loss.variant.needs_encoder() {
        return Ok(None);
    }
    if let Some(ck) = supplied {
        return load_encoder(ck).map(Some);
    }
    if let Some(ck) = from_ck.filter(|c| c.has_prefix("encoder")) {
        return load_encoder(ck).map(Some);
    }
    Err(Error::MissingPerceptualEncoder(cfg.loss.variant.to_string()))
}

fn checked_generator(models: &Models, cfg: &TrainConfig, ck: &ModelCheckpoint) -> Result<ParamSet<f32>> {
    let want = cfg.generator.to_manifest();
    let got = ck.manifest.section("generator");
    if want != got {
        return Err(Error::ArchitectureMismatch(describe_mismatch("generator", &want, &got)));
    }
    let ps = ck.params("generator")?;
    check_layout(&models.gen.init::<f32>(0), &ps, "generator")?;
    Ok(ps)
}

fn checked_critic(critic: &Critic, cfg: &TrainConfig, ck: &ModelCheckpoint) -> Result<ParamSet<f32>> {
    let want = cfg.critic.to_manifest();
    let got = ck.manifest.section("critic");
    if want != got {
        return Err(Error::ArchitectureMismatch(describe_mismatch("critic", &want, &got)));
    }
    let ps = ck.params("critic")?;
    check_layout(&critic.init::<f32>(0), &ps, "critic")?;
    Ok(ps)
}

/// Trains a generator from scratch, or resumes from `initial` with its
/// optimiser state and step count.
///
/// Adversarial variants alternate `critic_steps` critic updates with one
/// generator update. `encoder` is required by the feature-loss variants
/// unless `initial` already carries one.
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    initial: Option<&ModelCheckpoint>,
    encoder: Option<&ModelCheckpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let models = build_models(cfg)?;
    let start = match initial {
        None => Start {
            gen: models.gen.init(stream_seed(cfg.seed, "generator")),
            critic: models.critic.as_ref().map(|c| c.init(stream_seed(cfg.seed, "critic"))),
            encoder: pick_encoder(cfg, None, encoder)?,
            gen_adam: AdamState::new(),
            critic_adam: AdamState::new(),
            step: 0,
            lineage: None,
            append_log: false,
        },
        Some(ck) => {
            let gen = checked_generator(&models, cfg, ck)?;
            let want = cfg.loss.to_manifest();
            if ck.manifest.section("loss") != want {
                return Err(Error::ArchitectureMismatch(describe_mismatch("loss", &want, &ck.manifest.section("loss"))));
            }
            let critic = models.critic.as_ref().map(|c| checked_critic(c, cfg, ck)).transpose()?;
            Start {
                gen,
                critic,
                encoder: pick_encoder(cfg, Some(ck), encoder)?,
                gen_adam: ck.adam("adam.generator")?,
                critic_adam: ck.adam("adam.critic")?,
                step: ck.manifest.parse_or("step", 0)?,
                lineage: ck.manifest.get("lineage").map(str::to_string),
                append_log: true,
            }
        }
    };
    run(dataset, cfg, &models, start)
}

/// Starts from the weights of `parent` with fresh optimiser state and a new
/// step count; the result records `parent` in its lineage.
pub fn finetune(
    parent: &ModelCheckpoint,
    dataset: &Dataset,
    cfg: &TrainConfig,
    encoder: Option<&ModelCheckpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if parent.manifest.get("kind") != Some(KIND_GENERATOR) {
        return Err(Error::ArchitectureMismatch("fine-tuning needs a generator checkpoint".into()));
    }
    let models = build_models(cfg)?;
    let gen = checked_generator(&models, cfg, parent)?;
    let critic = match &models.critic {
        Some(c) if parent.has_prefix("critic") => Some(checked_critic(c, cfg, parent)?),
        Some(c) => Some(c.init(stream_seed(cfg.seed, "critic"))),
        None => None,
    };
    let id = parent.id();
    let lineage = match parent.manifest.get("lineage") {
        Some(l) => format!("{l},{id}"),
        None => id,
    };
    let start = Start {
        gen,
        critic,
        encoder: pick_encoder(cfg, Some(parent), encoder)?,
        gen_adam: AdamState::new(),
        critic_adam: AdamState::new(),
        step: 0,
        lineage: Some(lineage),
        append_log: false,
    };
    run(dataset, cfg, &models, start)
}

#[allow(clippy::too_many_arguments)]
fn snapshot(
    cfg: &TrainConfig,
    gen: &ParamSet<f32>,
    critic: Option<&ParamSet<f32>>,
    encoder: Option<&FrozenEncoder<f32>>,
    gen_adam: &AdamState<f32>,
    critic_adam: &AdamState<f32>,
    step: usize,
    spe: usize,
    lineage: &Option<String>,
    history: &Manifest,
) -> ModelCheckpoint {
    let mut m = cfg.run_manifest();
    m.set("kind", KIND_GENERATOR);
    m.set("variant", cfg.loss.variant);
    m.set("step", step);
    m.set("epoch", step / spe);
    m.set("seed", cfg.seed);
    if let Some(l) = lineage {
        m.set("lineage", l);
        m.set("parent", l.rsplit(',').next().unwrap_or(l));
    }
    m.nest("history", history);
    if let Some(e) = encoder {
        m.nest("encoder", &e.encoder.config().to_manifest());
    }
    let mut ck = ModelCheckpoint::new(m);
    ck.insert_params("generator", gen);
    ck.insert_adam("adam.generator", gen, gen_adam);
    if let Some(c) = critic {
        ck.insert_params("critic", c);
        ck.insert_adam("adam.critic", c, critic_adam);
    }
    if let Some(e) = encoder {
        ck.insert_params("encoder", e.params());
    }
    ck
}

fn run(dataset: &Dataset, cfg: &TrainConfig, models: &Models, start: Start) -> Result<TrainOutcome> {
    let Start {
        gen: mut gps,
        critic: mut cps,
        encoder,
        gen_adam: mut ga,
        critic_adam: mut ca,
        step: first,
        lineage,
        append_log,
    } = start;
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    let variant = cfg.loss.variant;
    let n = dataset.train.len();
    let b = cfg.batch;
    let spe = steps_per_epoch(n, b);
    let total = (cfg.epochs * spe).min(cfg.max_steps.unwrap_or(usize::MAX));
    let mut sink = LogSink::open(&cfg.out_dir, append_log)?;
    let clock = Instant::now();
    let mut log = Vec::new();
    let mut validation = Vec::new();
    let mut history = Manifest::new();
    let mut last_ck: Option<PathBuf> = None;
    let feature_term = variant.terms().iter().copied().find(|t| *t != Term::Adversarial);
    let gather = |idx: &[usize]| -> Result<(Tensor<f32>, Tensor<f32>)> {
        let hr: Vec<&Image> = idx.iter().map(|&i| &dataset.train[i].hr).collect();
        let lr: Vec<&Image> = idx.iter().map(|&i| &dataset.train[i].lr).collect();
        Ok((batch_tensor(&hr)?, batch_tensor(&lr)?))
    };
    let save = |ck: &ModelCheckpoint, name: &str| -> Result<Option<PathBuf>> {
        match &cfg.out_dir {
            None => Ok(None),
            Some(dir) => {
                let p = dir.join(name);
                ck.save(&p)?;
                Ok(Some(p))
            }
        }
    };

    for step in first..total {
        let epoch = step / spe;
        let lr = cfg.lr_at(epoch);
        let mut rec = LogRecord {
            step,
            epoch,
            ..Default::default()
        };

        if let (Some(critic), Some(cp)) = (&models.critic, cps.as_mut()) {
            cp.set_trainable(true);
            gps.set_trainable(false);
            for iter in 0..cfg.loss.critic_steps {
                let (idx, eps) = critic_draw(cfg.seed, step, iter, n, b);
                let (real, lr_t) = gather(&idx)?;
                let fake = no_grad(|| super_resolve(&models.gen, &gps, &lr_t))?;
                let cl = {
                    let score = |x: &Tensor<f32>| critic.forward(x, cp);
                    critic_loss(&score, &real, &fake, cfg.loss.lambda_gp, &eps)?
                };
                rec.critic_loss = Some(finite(cl.total.item() as f64, step, "critic loss", &last_ck)?);
                rec.wasserstein_estimate = Some(finite(cl.wasserstein, step, "wasserstein estimate", &last_ck)?);
                rec.gradient_penalty = Some(cl.penalty.item() as f64);
                backward(&cl.total, cp)?;
                adam_step(cp, &mut ca, &cfg.adam, lr)?;
            }
            cp.set_trainable(false);
            gps.set_trainable(true);
        }

        let idx = epoch_batch(cfg.seed, epoch, step % spe, n, b);
        let (hr, lr_t) = gather(&idx)?;
        let sr = super_resolve(&models.gen, &gps, &lr_t)?;
        let mut parts = LossParts::default();
        if let (Some(critic), Some(cp)) = (&models.critic, cps.as_ref()) {
            let score = |x: &Tensor<f32>| critic.forward(x, cp);
            let adv = generator_adv_loss(&score, &sr)?;
            rec.adversarial = Some(adv.item() as f64);
            parts.adversarial = Some(adv);
        }
        if let (Some(term), Some(enc)) = (feature_term, encoder.as_ref()) {
            let f = perceptual_loss(enc, &sr, &hr)?;
            let v = Some(f.item() as f64);
            match term {
                Term::Perceptual => {
                    rec.perceptual = v;
                    parts.perceptual = Some(f);
                }
                _ => {
                    rec.vgg = v;
                    parts.vgg = Some(f);
                }
            }
        }
        let total_loss = total_generator_loss(&cfg.loss, &parts)?;
        rec.generator_loss = Some(finite(total_loss.item() as f64, step, "generator loss", &last_ck)?);
        backward(&total_loss, &mut gps)?;
        adam_step(&mut gps, &mut ga, &cfg.adam, lr)?;
        rec.wall_seconds = clock.elapsed().as_secs_f64();
        sink.write(&rec.to_json())?;

        let done = step + 1;
        history.set("final_generator_loss", rec.generator_loss.unwrap_or(f64::NAN));
        if let Some(w) = rec.wasserstein_estimate {
            history.set("final_wasserstein", w);
        }
        log.push(rec);

        let epoch_end = done % spe == 0;
        if (epoch_end || done == total) && !dataset.val.is_empty() {
            let (p, s, bp, bs) = evaluate_generator(&models.gen, &gps, &dataset.val, &cfg.ssim)?;
            let v = Validation {
                step: done,
                epoch,
                psnr: p,
                ssim: s,
                bicubic_psnr: bp,
                bicubic_ssim: bs,
            };
            sink.write(&v.to_json())?;
            history.set("val_psnr_db", p);
            history.set("val_ssim", s);
            history.set("bicubic_psnr_db", bp);
            history.set("bicubic_ssim", bs);
            validation.push(v);
        }
        if epoch_end && cfg.checkpoint_every > 0 && (done / spe) % cfg.checkpoint_every == 0 && done != total {
            let ck = snapshot(cfg, &gps, cps.as_ref(), encoder.as_ref(), &ga, &ca, done, spe, &lineage, &history);
            if let Some(p) = save(&ck, &format!("epoch_{:04}", done / spe))? {
                last_ck = Some(p);
            }
        }
    }
    gps.set_trainable(true);
    if let Some(cp) = cps.as_mut() {
        cp.set_trainable(true);
    }
    let done = total.max(first);
    let ck = snapshot(cfg, &gps, cps.as_ref(), encoder.as_ref(), &ga, &ca, done, spe, &lineage, &history);
    save(&ck, "final")?;
    Ok(TrainOutcome {
        checkpoint: ck,
        log,
        validation,
    })
}

/// Reads a training log back.
pub fn read_log(path: &Path) -> Result<Vec<Value>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display()))))
        .collect()
}
