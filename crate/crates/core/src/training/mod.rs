//! Adversarial optimization of the two generators and two discriminators.

mod adam;
mod checkpoint;
mod pool;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig, Moments};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use pool::HistoryPool;

use crate::data::{CorpusIndex, PrepConfig, UnpairedSampler};
use crate::error::{Error, Result};
use crate::losses::{lsgan_d_loss, total_generator_loss, CycleBundle, FakeScores, LossBreakdown, LossWeights};
use crate::models::{
    build_generator, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, NetSpec,
    NetworkParams, Role,
};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub pool_size: usize,
    /// Checkpoint every this many steps (0 disables intermediate saves).
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            learning_rate: 1e-4,
            batch_size: 1,
            patch_size: 128,
            weights: LossWeights::default(),
            seed: 0,
            pool_size: 50,
            checkpoint_interval: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.lr must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return Err(Error::Config("batch and patch size must be positive".into()));
        }
        self.weights.validate()
    }
}

/// Specs of the four networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSpecs {
    pub g: GeneratorSpec,
    pub f: GeneratorSpec,
    pub d_x: DiscriminatorSpec,
    pub d_y: DiscriminatorSpec,
}

impl Default for CycleSpecs {
    fn default() -> Self {
        Self {
            g: GeneratorSpec::new(3, 4),
            f: GeneratorSpec::new(4, 3),
            d_x: DiscriminatorSpec::new(3),
            d_y: DiscriminatorSpec::new(4),
        }
    }
}

impl CycleSpecs {
    pub fn from_config(cfg: &crate::config::Config) -> Self {
        Self {
            g: cfg.generator_spec(3, 4),
            f: cfg.generator_spec(4, 3),
            d_x: cfg.discriminator_spec(3),
            d_y: cfg.discriminator_spec(4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.g.validate()?;
        self.f.validate()?;
        self.d_x.validate()?;
        self.d_y.validate()?;
        let wiring = (self.g.in_channels, self.g.out_channels)
            == (3, 4)
            && (self.f.in_channels, self.f.out_channels) == (4, 3)
            && self.d_x.in_channels == 3
            && self.d_y.in_channels == 4;
        if !wiring {
            return Err(Error::Config(
                "expected G: 3->4, F: 4->3, D_X on 3 channels, D_Y on 4 channels".into(),
            ));
        }
        Ok(())
    }
}

/// The four networks of the cycle.
#[derive(Debug, Clone)]
pub struct CycleModel {
    pub g: Generator,
    pub f: Generator,
    pub d_x: Discriminator,
    pub d_y: Discriminator,
}

impl CycleModel {
    /// Build all four networks; each draws its weights from its own seed
    /// derived from `rng` in the order G, F, D_X, D_Y.
    pub fn build(specs: &CycleSpecs, rng: &mut ChaCha8Rng, device: &Device, dtype: DType) -> Result<Self> {
        specs.validate()?;
        let mut sub = || ChaCha8Rng::seed_from_u64(rng.next_u64());
        let g = build_generator(&specs.g, &mut sub(), device, dtype)?;
        let f = build_generator(&specs.f, &mut sub(), device, dtype)?;
        let d_x = Discriminator::build(&specs.d_x, &mut sub(), device, dtype)?;
        let d_y = Discriminator::build(&specs.d_y, &mut sub(), device, dtype)?;
        Ok(Self { g, f, d_x, d_y })
    }

    pub fn params(&self, role: Role) -> &NetworkParams {
        match role {
            Role::G => self.g.params(),
            Role::F => self.f.params(),
            Role::DX => self.d_x.params(),
            Role::DY => self.d_y.params(),
        }
    }

    /// Run both cycles and the fake-sample discriminator scores.
    pub fn cycle(&self, x: &Tensor, y: &Tensor) -> Result<(CycleBundle, FakeScores)> {
        let g_x = self.g.forward(x)?;
        let f_g_x = self.f.forward(&g_x)?;
        let f_y = self.f.forward(y)?;
        let g_f_y = self.g.forward(&f_y)?;
        let scores = FakeScores {
            d_y_of_g_x: self.d_y.forward(&g_x)?,
            d_x_of_f_y: self.d_x.forward(&f_y)?,
        };
        let bundle = CycleBundle {
            x: x.clone(),
            g_x,
            f_g_x,
            y: y.clone(),
            f_y,
            g_f_y,
        };
        Ok((bundle, scores))
    }
}

fn prefixed(params: &[&NetworkParams]) -> BTreeMap<String, Var> {
    params
        .iter()
        .flat_map(|p| {
            p.vars()
                .iter()
                .map(move |(k, v)| (format!("{}/{k}", p.role.tag()), v.clone()))
        })
        .collect()
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Losses of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    /// 1-based index of the completed step.
    pub step: u64,
    pub generator: LossBreakdown,
    pub d_x: f64,
    pub d_y: f64,
}

impl StepLosses {
    pub const CSV_HEADER: &'static str = "step,l_cyc,l_gan,l_ssim,l_grad,l_total,d_x,d_y";

    pub fn csv_row(&self) -> String {
        let g = &self.generator;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, g.cyc, g.gan, g.ssim, g.grad, g.total, self.d_x, self.d_y
        )
    }

    fn all_finite(&self) -> bool {
        let g = &self.generator;
        [g.cyc, g.gan, g.ssim, g.grad, g.total, self.d_x, self.d_y]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Fakes produced by the generator half of a step, detached from the graph.
#[derive(Debug, Clone)]
pub struct GeneratedFakes {
    /// `F(y)`, shown to `D_X`.
    pub fake_x: Tensor,
    /// `G(x)`, shown to `D_Y`.
    pub fake_y: Tensor,
}

/// Complete mutable training state: networks, optimizers, history pools,
/// data random stream and step counter.
pub struct Trainer {
    config: TrainConfig,
    specs: CycleSpecs,
    model: CycleModel,
    opt_gen: Adam,
    opt_d_x: Adam,
    opt_d_y: Adam,
    pool_x: HistoryPool<Tensor>,
    pool_y: HistoryPool<Tensor>,
    data_rng: ChaCha8Rng,
    step: u64,
    device: Device,
    dtype: DType,
}

impl Trainer {
    pub fn new(config: TrainConfig, specs: CycleSpecs, device: &Device, dtype: DType) -> Result<Self> {
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let model = CycleModel::build(&specs, &mut master, device, dtype)?;
        let data_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let pool_x = HistoryPool::new(config.pool_size, ChaCha8Rng::seed_from_u64(master.next_u64()));
        let pool_y = HistoryPool::new(config.pool_size, ChaCha8Rng::seed_from_u64(master.next_u64()));
        Self::assemble(config, specs, model, pool_x, pool_y, data_rng, device, dtype)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: TrainConfig,
        specs: CycleSpecs,
        model: CycleModel,
        pool_x: HistoryPool<Tensor>,
        pool_y: HistoryPool<Tensor>,
        data_rng: ChaCha8Rng,
        device: &Device,
        dtype: DType,
    ) -> Result<Self> {
        let adam = AdamConfig::new(config.learning_rate);
        let opt_gen = Adam::new(prefixed(&[model.g.params(), model.f.params()]), adam)?;
        let opt_d_x = Adam::new(prefixed(&[model.d_x.params()]), adam)?;
        let opt_d_y = Adam::new(prefixed(&[model.d_y.params()]), adam)?;
        Ok(Self {
            config,
            specs,
            model,
            opt_gen,
            opt_d_x,
            opt_d_y,
            pool_x,
            pool_y,
            data_rng,
            step: 0,
            device: device.clone(),
            dtype,
        })
    }

    pub fn model(&self) -> &CycleModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn data_rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.data_rng
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn diverged(&self, detail: String) -> Error {
        Error::Training {
            step: self.step + 1,
            detail,
        }
    }

    /// Joint Adam update of G and F on the composite generator objective.
    pub fn update_generators(&mut self, x: &Tensor, y: &Tensor) -> Result<(GeneratedFakes, LossBreakdown)> {
        let (bundle, scores) = self.model.cycle(x, y)?;
        let (loss, breakdown) = total_generator_loss(&bundle, &scores, &self.config.weights)?;
        if !breakdown.total.is_finite() {
            return Err(self.diverged(format!("non-finite generator loss {breakdown:?}")));
        }
        let grads = loss.backward()?;
        self.opt_gen.step(&grads)?;
        Ok((
            GeneratedFakes {
                fake_x: bundle.f_y.detach(),
                fake_y: bundle.g_x.detach(),
            },
            breakdown,
        ))
    }

    /// Adam update of `D_X` or `D_Y` on the least-squares objective.
    pub fn update_discriminator(&mut self, role: Role, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let (disc, opt) = match role {
            Role::DX => (&self.model.d_x, &mut self.opt_d_x),
            Role::DY => (&self.model.d_y, &mut self.opt_d_y),
            other => {
                return Err(Error::Argument(format!("{} is not a discriminator", other.tag())))
            }
        };
        let loss = lsgan_d_loss(&disc.forward(real)?, &disc.forward(fake)?)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(self.diverged(format!("non-finite {} loss", role.tag())));
        }
        opt.step(&loss.backward()?)?;
        Ok(value)
    }

    fn pooled(pool: &mut HistoryPool<Tensor>, fresh: &Tensor) -> Result<Tensor> {
        let items = (0..fresh.dim(0)?)
            .map(|i| Ok(pool.query(fresh.narrow(0, i, 1)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&items, 0)?)
    }

    /// One step: generators first, then `D_X`, then `D_Y`, the latter two on
    /// history-pooled fakes.
    pub fn train_step(&mut self, x: &ImageTensor, y: &ImageTensor) -> Result<StepLosses> {
        if x.channels() != 3 || y.channels() != 4 {
            return Err(Error::Shape(format!(
                "batch must be x: 3 channels, y: 4 channels; got {} and {}",
                x.channels(),
                y.channels()
            )));
        }
        let x = x.to_nchw(&self.device, self.dtype)?;
        let y = y.to_nchw(&self.device, self.dtype)?;
        let (fakes, generator) = self.update_generators(&x, &y)?;
        let fake_x = Self::pooled(&mut self.pool_x, &fakes.fake_x)?;
        let fake_y = Self::pooled(&mut self.pool_y, &fakes.fake_y)?;
        let d_x = self.update_discriminator(Role::DX, &x, &fake_x)?;
        let d_y = self.update_discriminator(Role::DY, &y, &fake_y)?;
        let losses = StepLosses {
            step: self.step + 1,
            generator,
            d_x,
            d_y,
        };
        if !losses.all_finite() {
            return Err(self.diverged(format!("non-finite losses {losses:?}")));
        }
        self.step += 1;
        Ok(losses)
    }

    /// Snapshot of the full state.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.step);
        for role in Role::ALL {
            ck.insert_network(self.model.params(role));
        }
        for (tag, opt) in [("gen", &self.opt_gen), ("d_x", &self.opt_d_x), ("d_y", &self.opt_d_y)] {
            for (name, mo) in opt.moments() {
                ck.tensors.insert(format!("opt.{tag}.m/{name}"), mo.m.clone());
                ck.tensors.insert(format!("opt.{tag}.v/{name}"), mo.v.clone());
            }
        }
        for (tag, pool) in [("x", &self.pool_x), ("y", &self.pool_y)] {
            for (i, t) in pool.items().iter().enumerate() {
                ck.tensors.insert(format!("pool.{tag}/{i:06}"), t.clone());
            }
        }
        ck.meta = serde_json::json!({
            "train_config": self.config,
            "cycle_specs": self.specs,
            "opt_steps": {
                "gen": self.opt_gen.steps(),
                "d_x": self.opt_d_x.steps(),
                "d_y": self.opt_d_y.steps(),
            },
            "pool_len": { "x": self.pool_x.len(), "y": self.pool_y.len() },
            "rng": {
                "data": self.data_rng,
                "pool_x": self.pool_x.rng(),
                "pool_y": self.pool_y.rng(),
            },
        });
        Ok(ck)
    }

    /// Restore a trainer from a checkpoint written by [`Self::to_checkpoint`].
    ///
    /// The schedule (`epochs`, interval) comes from `config`; the network
    /// specs must match the stored ones.
    pub fn from_checkpoint(ck: &Checkpoint, config: TrainConfig, device: &Device) -> Result<Self> {
        let meta = &ck.meta;
        let get = |ptr: &str| {
            meta.pointer(ptr)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint meta lacks {ptr}")))
        };
        let parse = |ptr: &str| -> Result<serde_json::Value> { get(ptr) };
        let specs: CycleSpecs = serde_json::from_value(parse("/cycle_specs")?)
            .map_err(|e| Error::Checkpoint(format!("cycle specs: {e}")))?;
        let rng = |ptr: &str| -> Result<ChaCha8Rng> {
            serde_json::from_value(parse(ptr)?).map_err(|e| Error::Checkpoint(format!("{ptr}: {e}")))
        };
        let count = |ptr: &str| -> Result<u64> {
            parse(ptr)?
                .as_u64()
                .ok_or_else(|| Error::Checkpoint(format!("{ptr} is not an integer")))
        };

        let g = Generator::from_params(ck.network(Role::G)?)?;
        let f = Generator::from_params(ck.network(Role::F)?)?;
        let d_x = Discriminator::from_params(ck.network(Role::DX)?)?;
        let d_y = Discriminator::from_params(ck.network(Role::DY)?)?;
        for (role, spec) in [
            (Role::G, NetSpec::Generator(specs.g.clone())),
            (Role::F, NetSpec::Generator(specs.f.clone())),
            (Role::DX, NetSpec::Discriminator(specs.d_x.clone())),
            (Role::DY, NetSpec::Discriminator(specs.d_y.clone())),
        ] {
            if ck.specs.get(&role) != Some(&spec) {
                return Err(Error::Checkpoint(format!("{} spec disagrees with metadata", role.tag())));
            }
        }
        let dtype = g.params().vars().values().next().map(|v| v.dtype()).unwrap_or(DType::F32);
        let model = CycleModel { g, f, d_x, d_y };

        let pool = |tag: &str| -> Result<HistoryPool<Tensor>> {
            let len = count(&format!("/pool_len/{tag}"))? as usize;
            let items = (0..len)
                .map(|i| {
                    ck.tensors
                        .get(&format!("pool.{tag}/{i:06}"))
                        .cloned()
                        .ok_or_else(|| Error::Checkpoint(format!("missing pool.{tag} item {i}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(HistoryPool::from_parts(config.pool_size, items, rng(&format!("/rng/pool_{tag}"))?))
        };
        let pool_x = pool("x")?;
        let pool_y = pool("y")?;

        let mut trainer = Self::assemble(
            config,
            specs,
            model,
            pool_x,
            pool_y,
            rng("/rng/data")?,
            device,
            dtype,
        )?;
        for tag in ["gen", "d_x", "d_y"] {
            let steps = count(&format!("/opt_steps/{tag}"))?;
            let opt = match tag {
                "gen" => &mut trainer.opt_gen,
                "d_x" => &mut trainer.opt_d_x,
                _ => &mut trainer.opt_d_y,
            };
            let names: Vec<String> = opt.moments().keys().cloned().collect();
            let mut moments = BTreeMap::new();
            for name in names {
                let fetch = |kind: &str| {
                    ck.tensors
                        .get(&format!("opt.{tag}.{kind}/{name}"))
                        .cloned()
                        .ok_or_else(|| Error::Checkpoint(format!("missing opt.{tag}.{kind}/{name}")))
                };
                moments.insert(name.clone(), Moments { m: fetch("m")?, v: fetch("v")? });
            }
            opt.restore(steps, moments)?;
        }
        trainer.step = ck.step;
        Ok(trainer)
    }
}

/// Steps in one epoch: `ceil(max(|uw|, |aerial|) / batch)`.
pub fn steps_per_epoch(sampler: &UnpairedSampler, batch_size: usize) -> u64 {
    sampler.epoch_len().div_ceil(batch_size).max(1) as u64
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Receives `losses.csv` and `checkpoints/`.
    pub run_dir: PathBuf,
    pub resume: Option<PathBuf>,
    /// Stop after this many total steps even if epochs remain (for tests and
    /// time-boxed runs); the stop step is checkpointed.
    pub max_steps: Option<u64>,
    pub dtype: DType,
}

impl FitOptions {
    pub fn new(run_dir: impl Into<PathBuf>) -> Self {
        Self {
            run_dir: run_dir.into(),
            resume: None,
            max_steps: None,
            dtype: DType::F32,
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub final_checkpoint: PathBuf,
    pub steps_run: u64,
    pub final_step: u64,
    pub losses: Vec<StepLosses>,
}

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("step-{step:08}.ckpt"))
}

/// Train for `epochs * steps_per_epoch` steps, logging every step to
/// `losses.csv` and checkpointing at the configured interval and at the end.
pub fn fit(
    uw: &CorpusIndex,
    aerial: &CorpusIndex,
    prep: &PrepConfig,
    config: &TrainConfig,
    specs: &CycleSpecs,
    options: &FitOptions,
) -> Result<FitOutcome> {
    config.validate()?;
    let mut sampler = UnpairedSampler::new(uw.clone(), aerial.clone(), prep.clone())?;
    let device = Device::Cpu;
    let mut trainer = match &options.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let t = Trainer::from_checkpoint(&ck, config.clone(), &device)?;
            if &t.specs != specs {
                return Err(Error::Config("resumed checkpoint was trained with different network specs".into()));
            }
            t
        }
        None => Trainer::new(config.clone(), specs.clone(), &device, options.dtype)?,
    };

    let ck_dir = options.run_dir.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    let csv_path = options.run_dir.join("losses.csv");
    let new_file = !csv_path.exists();
    let mut csv = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)
        .map_err(|e| Error::io(&csv_path, e))?;
    if new_file {
        writeln!(csv, "{}", StepLosses::CSV_HEADER).map_err(|e| Error::io(&csv_path, e))?;
    }

    let total = config.epochs as u64 * steps_per_epoch(&sampler, config.batch_size);
    let stop = options.max_steps.map_or(total, |m| m.min(total));
    let start = trainer.step();
    let mut losses = Vec::new();
    let mut last_ck = None;
    while trainer.step() < stop {
        let (x, y) = sampler.make_unpaired_batch(config.batch_size, config.patch_size, trainer.data_rng_mut())?;
        let l = trainer.train_step(&x, &y)?;
        writeln!(csv, "{}", l.csv_row()).map_err(|e| Error::io(&csv_path, e))?;
        if l.step % 10 == 0 || l.step == stop {
            log::info!(
                "step {}/{} total={:.4} cyc={:.4} gan={:.4} ssim={:.4} grad={:.4} d_x={:.4} d_y={:.4}",
                l.step, total, l.generator.total, l.generator.cyc, l.generator.gan,
                l.generator.ssim, l.generator.grad, l.d_x, l.d_y
            );
        }
        losses.push(l);
        let at_interval = config.checkpoint_interval > 0 && l.step % config.checkpoint_interval == 0;
        if at_interval || l.step == stop {
            let path = checkpoint_path(&options.run_dir, l.step);
            trainer.to_checkpoint()?.save(&path)?;
            last_ck = Some(path);
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;

    let final_checkpoint = match last_ck {
        Some(p) => p,
        None => {
            // Nothing left to run (e.g. resuming a finished run): re-save the state.
            let path = checkpoint_path(&options.run_dir, trainer.step());
            trainer.to_checkpoint()?.save(&path)?;
            path
        }
    };
    Ok(FitOutcome {
        final_checkpoint,
        steps_run: trainer.step() - start,
        final_step: trainer.step(),
        losses,
    })
}
