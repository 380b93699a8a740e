//! The training loop: one mask per iteration shared by every term, a joint
//! generator update, then a joint update of the four discriminators.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_pipeline::{load_dataset, Batch, DatasetSpec};
use crate::error::{Error, Result};
use crate::img::{self, Image};
use crate::mask_gen::{Mask, MaskSampler, MaskScheme};
use crate::nets::{Checkpoint, NetConfig};
use crate::objectives::{
    cycle_loss, full_objective, gan_loss_discriminator, gan_loss_generator, identity_loss,
    scalar, GanCriterion, LossParts, LossReport, LossWeights,
};
use crate::optim::AdamConfig;
use crate::rng::{streams, RngSnapshot, RngState};

pub const MAX_POOL_SIZE: usize = 50;

fn default_scheme() -> MaskScheme {
    MaskScheme::multi_rectangles()
}

fn default_learning_rate() -> f64 {
    2e-4
}

fn default_betas() -> (f64, f64) {
    (0.5, 0.999)
}

fn default_pool_size() -> usize {
    MAX_POOL_SIZE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub criterion: GanCriterion,
    #[serde(default = "default_scheme")]
    pub scheme: MaskScheme,
    /// Total number of iterations; a resumed run stops here too.
    pub iterations: u64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_betas")]
    pub adam_betas: (f64, f64),
    /// 0 disables periodic checkpoints.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// 0 disables snapshot grids.
    #[serde(default)]
    pub snapshot_every: u64,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    /// Defaults to [`NetConfig::for_resolution`] of the dataset resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net: Option<NetConfig>,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    /// Linear decay of the learning rate to zero, starting after this
    /// iteration. Off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay_start: Option<u64>,
}

impl TrainConfig {
    pub fn new(dataset: DatasetSpec, iterations: u64) -> Self {
        Self {
            weights: LossWeights::default(),
            criterion: GanCriterion::default(),
            scheme: default_scheme(),
            iterations,
            learning_rate: default_learning_rate(),
            adam_betas: default_betas(),
            checkpoint_every: 0,
            snapshot_every: 0,
            seed: 0,
            dataset,
            net: None,
            pool_size: MAX_POOL_SIZE,
            lr_decay_start: None,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        self.net
            .unwrap_or_else(|| NetConfig::for_resolution(self.dataset.resolution))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Param("iterations must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Param(format!(
                "learningRate must be positive, got {}",
                self.learning_rate
            )));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Param(format!("adamBetas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if self.pool_size > MAX_POOL_SIZE {
            return Err(Error::Param(format!(
                "poolSize is capped at {MAX_POOL_SIZE}, got {}",
                self.pool_size
            )));
        }
        self.weights.validate()?;
        self.dataset.validate()?;
        let net = self.net_config();
        net.validate()?;
        if net.resolution != self.dataset.resolution {
            return Err(Error::Param(format!(
                "net resolution {} differs from dataset resolution {}",
                net.resolution, self.dataset.resolution
            )));
        }
        self.scheme.validate(net.resolution)
    }

    /// Learning rate in effect at 1-based iteration `it`.
    pub fn learning_rate_at(&self, it: u64) -> f64 {
        match self.lr_decay_start {
            Some(start) if it > start && self.iterations > start => {
                let span = (self.iterations - start + 1) as f64;
                self.learning_rate * (1.0 - (it - start) as f64 / span)
            }
            _ => self.learning_rate,
        }
    }
}

/// History of recent fakes shown to the discriminators.
#[derive(Clone, Debug)]
pub struct FakePool<T> {
    capacity: usize,
    items: Vec<T>,
}

impl<T: Clone> FakePool<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// While filling up, stores and returns `fresh`. Once full, returns
    /// `fresh` or, with probability one half, swaps it for a stored fake.
    pub fn draw<R: Rng + ?Sized>(&mut self, fresh: T, rng: &mut R) -> T {
        if self.capacity == 0 {
            return fresh;
        }
        if self.items.len() < self.capacity {
            self.items.push(fresh.clone());
            return fresh;
        }
        if rng.random_bool(0.5) {
            let k = rng.random_range(0..self.items.len());
            std::mem::replace(&mut self.items[k], fresh)
        } else {
            fresh
        }
    }
}

fn pool_batch(pool: &mut FakePool<Tensor>, fakes: &Tensor, rng: &mut RngState) -> Result<Tensor> {
    let n = fakes.dim(0)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let fresh = fakes.get(i)?.unsqueeze(0)?.detach();
        out.push(pool.draw(fresh, rng));
    }
    Ok(Tensor::cat(&out, 0)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Bookkeeping {
    mask_rng: RngSnapshot,
    pool_rng: RngSnapshot,
}

/// Images of the first batch element from one step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub report: LossReport,
    pub mask: Mask,
    a: Tensor,
    b: Tensor,
    fake_a: Tensor,
    fake_b: Tensor,
    rec_a: Tensor,
    rec_b: Tensor,
}

impl StepOutput {
    /// Two rows: `a, m, b̃, a'` and `b, m, ã, b'`.
    pub fn snapshot_grid(&self) -> Result<Image> {
        let first = |t: &Tensor| -> Result<Image> { Image::from_tensor(&t.get(0)?) };
        let m = self.mask.to_image();
        img::tile(&[
            vec![first(&self.a)?, m.clone(), first(&self.fake_b)?, first(&self.rec_a)?],
            vec![first(&self.b)?, m, first(&self.fake_a)?, first(&self.rec_b)?],
        ])
    }
}

/// Tensors produced by the generator half of a step.
struct GeneratorPhase {
    a: Tensor,
    b: Tensor,
    m: Tensor,
    mask: Mask,
    fake_a: Tensor,
    fake_b: Tensor,
    rec_a: Tensor,
    rec_b: Tensor,
    parts: LossParts,
}

/// Models, optimizers and every random stream of a run.
pub struct TrainState {
    pub checkpoint: Checkpoint,
    sampler: MaskSampler,
    mask_rng: RngState,
    pool_rng: RngState,
    pool_a: FakePool<Tensor>,
    pool_b: FakePool<Tensor>,
    device: Device,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = RngState::with_stream(cfg.seed, streams::PARAMS);
        let checkpoint = Checkpoint::init(
            cfg.net_config(),
            cfg.scheme.clone(),
            cfg.adam(),
            &mut init_rng,
            device,
        )?;
        Self::from_parts(
            cfg,
            checkpoint,
            RngState::with_stream(cfg.seed, streams::MASKS),
            RngState::with_stream(cfg.seed, streams::POOLS),
            device,
        )
    }

    /// Continues from a checkpoint written by [`fit`]. Fake pools restart
    /// empty.
    pub fn resume(cfg: &TrainConfig, checkpoint: Checkpoint, device: &Device) -> Result<Self> {
        cfg.validate()?;
        if checkpoint.net != cfg.net_config() {
            return Err(Error::Param(format!(
                "checkpoint architecture {:?} differs from config {:?}",
                checkpoint.net,
                cfg.net_config()
            )));
        }
        let (mask_rng, pool_rng) = match &checkpoint.trainer {
            Some(v) => {
                let b: Bookkeeping = serde_json::from_value(v.clone())
                    .map_err(|e| Error::Load(format!("bad trainer state in checkpoint: {e}")))?;
                (RngState::restore(b.mask_rng), RngState::restore(b.pool_rng))
            }
            None => (
                RngState::with_stream(cfg.seed, streams::MASKS),
                RngState::with_stream(cfg.seed, streams::POOLS),
            ),
        };
        Self::from_parts(cfg, checkpoint, mask_rng, pool_rng, device)
    }

    fn from_parts(
        cfg: &TrainConfig,
        mut checkpoint: Checkpoint,
        mask_rng: RngState,
        pool_rng: RngState,
        device: &Device,
    ) -> Result<Self> {
        let sampler = MaskSampler::new(cfg.scheme.clone(), checkpoint.resolution())?;
        checkpoint.scheme = cfg.scheme.clone();
        Ok(Self {
            checkpoint,
            sampler,
            mask_rng,
            pool_rng,
            pool_a: FakePool::new(cfg.pool_size),
            pool_b: FakePool::new(cfg.pool_size),
            device: device.clone(),
        })
    }

    /// Swaps in a sampler with preloaded attention maps.
    pub fn with_sampler(mut self, sampler: MaskSampler) -> Result<Self> {
        if sampler.size() != self.checkpoint.resolution() {
            return Err(Error::Param("sampler size differs from model resolution".into()));
        }
        self.sampler = sampler;
        Ok(self)
    }

    pub fn iteration(&self) -> u64 {
        self.checkpoint.iteration
    }

    pub fn pool_sizes(&self) -> (usize, usize) {
        (self.pool_a.len(), self.pool_b.len())
    }

    fn diagnostic(it: u64, mask: &Mask, parts: &LossParts, cause: &str) -> Error {
        Error::Numeric(format!(
            "iteration {it}: {cause}; terms ganA={} ganB={} cycA={} cycB={} idtA={} idtB={} dA={} dB={}; \
             mask {} of {} pixels set",
            parts.gan_a,
            parts.gan_b,
            parts.cyc_a,
            parts.cyc_b,
            parts.idt_a,
            parts.idt_b,
            parts.d_a,
            parts.d_b,
            mask.count_ones(),
            mask.size() * mask.size()
        ))
    }

    /// Forward passes and one joint generator update.
    fn generator_phase(&mut self, batch: &Batch, cfg: &TrainConfig) -> Result<GeneratorPhase> {
        let it = self.checkpoint.iteration + 1;
        let (a, b) = batch.tensors(&self.device)?;
        let mask = self.sampler.sample(&mut self.mask_rng)?;
        let m = mask.to_tensor(&self.device)?;
        let w = &cfg.weights;
        let Checkpoint {
            generators: g,
            discriminators: d,
            opt_g,
            ..
        } = &mut self.checkpoint;

        let fake_b = g.g_ab.forward(&a, &m)?;
        let fake_a = g.g_ba.forward(&b, &m)?;
        let rec_a = g.g_ba.forward(&fake_b, &m)?;
        let rec_b = g.g_ab.forward(&fake_a, &m)?;
        let same_a = g.g_ba.forward(&a, &m)?;
        let same_b = g.g_ab.forward(&b, &m)?;

        let mut parts = LossParts::default();
        let with_context = |e: Error, parts: &LossParts| match e {
            Error::Numeric(msg) => Self::diagnostic(it, &mask, parts, &msg),
            other => other,
        };
        let cyc_a = cycle_loss(&a, &rec_a, &m, w)?;
        let cyc_b = cycle_loss(&b, &rec_b, &m, w)?;
        let idt_a = identity_loss(&a, &same_a)?;
        let idt_b = identity_loss(&b, &same_b)?;
        parts.cyc_a = scalar(&cyc_a)?;
        parts.cyc_b = scalar(&cyc_b)?;
        parts.idt_a = scalar(&idt_a)?;
        parts.idt_b = scalar(&idt_b)?;
        let gan_a = gan_loss_generator(&d.d_af, &d.d_am, &fake_a, &m, w, cfg.criterion)
            .map_err(|e| with_context(e, &parts))?;
        let gan_b = gan_loss_generator(&d.d_bf, &d.d_bm, &fake_b, &m, w, cfg.criterion)
            .map_err(|e| with_context(e, &parts))?;
        parts.gan_a = scalar(&gan_a)?;
        parts.gan_b = scalar(&gan_b)?;

        let total = ((&gan_a + &gan_b)?
            + ((&cyc_a + &cyc_b)? * w.lambda_cyc)?
            + ((&idt_a + &idt_b)? * w.lambda_idt)?)?;
        let total_value = scalar(&total)?;
        let terms = [parts.gan_a, parts.gan_b, parts.cyc_a, parts.cyc_b, parts.idt_a, parts.idt_b];
        if !total_value.is_finite() || terms.iter().any(|v| !v.is_finite()) {
            return Err(Self::diagnostic(it, &mask, &parts, "non-finite generator loss"));
        }
        let grads = total.backward()?;
        opt_g.set_learning_rate(cfg.learning_rate_at(it));
        opt_g.step(&g.params, &grads)?;

        Ok(GeneratorPhase {
            a,
            b,
            m,
            mask,
            fake_a: fake_a.detach(),
            fake_b: fake_b.detach(),
            rec_a: rec_a.detach(),
            rec_b: rec_b.detach(),
            parts,
        })
    }

    /// `(1-λ)·d(D_full, real, fake) + λ·d(D_masked, real⊙m, fake⊙m)` for
    /// both domains, with fakes drawn through the history pools.
    fn discriminator_loss(&mut self, phase: &GeneratorPhase, cfg: &TrainConfig) -> Result<(Tensor, Tensor)> {
        let lam = cfg.weights.lambda_gan_m;
        let crit = cfg.criterion;
        let pooled_a = pool_batch(&mut self.pool_a, &phase.fake_a, &mut self.pool_rng)?;
        let pooled_b = pool_batch(&mut self.pool_b, &phase.fake_b, &mut self.pool_rng)?;
        let d = &self.checkpoint.discriminators;
        let m = &phase.m;
        let side = |full, masked, real: &Tensor, fake: &Tensor| -> Result<Tensor> {
            let f = gan_loss_discriminator(full, real, fake, crit)?;
            let mk = gan_loss_discriminator(
                masked,
                &real.broadcast_mul(m)?,
                &fake.broadcast_mul(m)?,
                crit,
            )?;
            Ok(((f * (1.0 - lam))? + (mk * lam)?)?)
        };
        let d_a = side(&d.d_af, &d.d_am, &phase.a, &pooled_a)?;
        let d_b = side(&d.d_bf, &d.d_bm, &phase.b, &pooled_b)?;
        Ok((d_a, d_b))
    }

    /// One full iteration on `batch`.
    pub fn train_step(&mut self, batch: &Batch, cfg: &TrainConfig) -> Result<StepOutput> {
        let it = self.checkpoint.iteration + 1;
        let mut phase = self.generator_phase(batch, cfg)?;

        let (d_a, d_b) = self
            .discriminator_loss(&phase, cfg)
            .map_err(|e| match e {
                Error::Numeric(msg) => Self::diagnostic(it, &phase.mask, &phase.parts, &msg),
                other => other,
            })?;
        phase.parts.d_a = scalar(&d_a)?;
        phase.parts.d_b = scalar(&d_b)?;
        if !(phase.parts.d_a.is_finite() && phase.parts.d_b.is_finite()) {
            return Err(Self::diagnostic(it, &phase.mask, &phase.parts, "non-finite discriminator loss"));
        }
        let grads = (d_a + d_b)?.backward()?;
        let Checkpoint {
            discriminators,
            opt_d,
            ..
        } = &mut self.checkpoint;
        opt_d.set_learning_rate(cfg.learning_rate_at(it));
        opt_d.step(&discriminators.params, &grads)?;
        self.checkpoint.iteration = it;

        let report = full_objective(it, &phase.parts, &cfg.weights)?;
        Ok(StepOutput {
            report,
            mask: phase.mask,
            a: phase.a,
            b: phase.b,
            fake_a: phase.fake_a,
            fake_b: phase.fake_b,
            rec_a: phase.rec_a,
            rec_b: phase.rec_b,
        })
    }

    /// Stores the config and rng positions in the checkpoint, then writes it.
    pub fn save(&mut self, cfg: &TrainConfig, path: &Path) -> Result<()> {
        self.checkpoint.config = Some(serde_json::to_value(cfg)?);
        self.checkpoint.trainer = Some(serde_json::to_value(Bookkeeping {
            mask_rng: self.mask_rng.snapshot(),
            pool_rng: self.pool_rng.snapshot(),
        })?);
        self.checkpoint.save(path)
    }
}

/// Result of [`fit`].
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Reports of the iterations run by this call.
    pub reports: Vec<LossReport>,
    pub final_path: PathBuf,
}

pub fn checkpoint_path(run_dir: &Path, iteration: u64) -> PathBuf {
    run_dir
        .join("checkpoints")
        .join(format!("ckpt_{iteration:06}.safetensors"))
}

pub fn snapshot_path(run_dir: &Path, iteration: u64) -> PathBuf {
    run_dir
        .join("snapshots")
        .join(format!("iter_{iteration:06}.png"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs iterations until `cfg.iterations`, writing into `run_dir`:
/// `loss_log.jsonl`, `config.json`, `checkpoints/`, `snapshots/` and
/// `final.safetensors`. With `resume`, training picks up after the
/// checkpoint's iteration and appends to the existing log.
pub fn fit(
    cfg: &TrainConfig,
    run_dir: &Path,
    resume: Option<&Path>,
    device: &Device,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = match resume {
        Some(p) => TrainState::resume(cfg, Checkpoint::load(p, device)?, device)?,
        None => TrainState::new(cfg, device)?,
    };
    let start = state.iteration();
    if start >= cfg.iterations {
        return Err(Error::Param(format!(
            "checkpoint is already at iteration {start}, nothing to do for iterations={}",
            cfg.iterations
        )));
    }
    let mut batches = load_dataset(&cfg.dataset, cfg.seed)?;
    // replay the data order up to the resume point
    for _ in 0..start {
        batches.next_batch()?;
    }

    create_dir(run_dir)?;
    if cfg.checkpoint_every > 0 {
        create_dir(&run_dir.join("checkpoints"))?;
    }
    if cfg.snapshot_every > 0 {
        create_dir(&run_dir.join("snapshots"))?;
    }
    let cfg_path = run_dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?)
        .map_err(|e| Error::io(&cfg_path, e))?;
    let log_path = run_dir.join("loss_log.jsonl");
    let mut log: File = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| Error::io(&log_path, e))?;

    let mut reports = Vec::with_capacity((cfg.iterations - start) as usize);
    while state.iteration() < cfg.iterations {
        let batch = batches.next_batch()?;
        let out = state.train_step(&batch, cfg)?;
        let it = out.report.iter;
        writeln!(log, "{}", out.report.to_json_line()).map_err(|e| Error::io(&log_path, e))?;
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            state.save(cfg, &checkpoint_path(run_dir, it))?;
        }
        if cfg.snapshot_every > 0 && it % cfg.snapshot_every == 0 {
            out.snapshot_grid()?.save_png(&snapshot_path(run_dir, it))?;
        }
        if it % 50 == 0 || it == cfg.iterations {
            log::info!(
                "iter {it}: total {:.4} cyc {:.4}/{:.4} dA {:.4} dB {:.4}",
                out.report.total,
                out.report.cyc_a,
                out.report.cyc_b,
                out.report.d_a,
                out.report.d_b
            );
        }
        reports.push(out.report);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_path = run_dir.join("final.safetensors");
    state.save(cfg, &final_path)?;
    Ok(TrainOutcome {
        checkpoint: state.checkpoint,
        reports,
        final_path,
    })
}

/// Reads a `loss_log.jsonl` file.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Deep copy of every parameter, keyed by name.
pub fn parameter_snapshot(store: &crate::nets::ParamStore) -> Result<BTreeMap<String, Vec<f32>>> {
    store
        .iter()
        .map(|(k, v)| {
            Ok((
                k.clone(),
                v.as_tensor().flatten_all()?.to_vec1::<f32>()?,
            ))
        })
        .collect()
}
