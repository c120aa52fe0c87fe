//! Optimisation loop: joint generator updates, discriminator updates against
//! replayed fakes, checkpoints and per-step metrics.

pub mod checkpoint;
mod config;
mod optim;
mod replay;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{parse_resolution, TrainConfig, CONFIG_KEYS};
pub use optim::Adam;
pub use replay::{buffer_draw, ReplayBuffer};

use crate::autograd::{frozen_params, no_grad, Module, Var};
use crate::dataset::{batches, Batch, DatasetManifest, Domain, Split};
use crate::error::{Error, Result};
use crate::imaging::SsimParams;
use crate::losses::{
    cycle_loss, discriminator_adversarial, generator_adversarial, identity_loss, perceptual_loss, ssim_loss,
    total_objectives, LossReport, TermValues,
};
use crate::networks::{BackboneKind, Direction, FeatureExtractor, Generator, PatchDiscriminator};

/// Seed of every randomly initialised backbone.
pub const BACKBONE_SEED: u64 = 0;
const STEP_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for sub-stream `tag` of a run seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix(seed ^ splitmix(tag))
}

/// Shuffle seed of one domain stream in one epoch.
pub fn shuffle_seed(seed: u64, epoch: u64, domain: Domain) -> u64 {
    let d = match domain {
        Domain::A => 0,
        Domain::B => 1,
    };
    derive_seed(derive_seed(seed, SHUFFLE_STREAM), 2 * epoch + d)
}

/// Frozen feature extractor from a kind, stage and optional weights file.
pub fn build_extractor(kind: BackboneKind, stage: &str, weights: Option<&Path>) -> Result<FeatureExtractor<f32>> {
    match weights {
        Some(p) => FeatureExtractor::from_safetensors(kind, stage, p),
        None => FeatureExtractor::seeded(kind, stage, BACKBONE_SEED),
    }
}

/// Everything that changes during training.
#[derive(Debug, Clone)]
pub struct RunState {
    pub step: u64,
    pub epoch: u64,
    pub g_ab: Generator<f32>,
    pub g_ba: Generator<f32>,
    pub d_a: PatchDiscriminator<f32>,
    pub d_b: PatchDiscriminator<f32>,
    pub opt_g_ab: Adam,
    pub opt_g_ba: Adam,
    pub opt_d_a: Adam,
    pub opt_d_b: Adam,
    pub buf_a: ReplayBuffer<ArrayD<f32>>,
    pub buf_b: ReplayBuffer<ArrayD<f32>>,
    pub rng: ChaCha8Rng,
}

impl RunState {
    /// Fresh networks initialised from `cfg.seed`.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
        let g_ab = Generator::new(cfg.generator_config(Direction::AB), &mut init)?;
        let g_ba = Generator::new(cfg.generator_config(Direction::BA), &mut init)?;
        let d_a = PatchDiscriminator::new(cfg.disc_width, &mut init);
        let d_b = PatchDiscriminator::new(cfg.disc_width, &mut init);
        let adam = || Adam::new(cfg.learning_rate, cfg.betas.0, cfg.betas.1);
        Ok(RunState {
            step: 0,
            epoch: 0,
            g_ab,
            g_ba,
            d_a,
            d_b,
            opt_g_ab: adam(),
            opt_g_ba: adam(),
            opt_d_a: adam(),
            opt_d_b: adam(),
            buf_a: ReplayBuffer::new(cfg.replay_capacity),
            buf_b: ReplayBuffer::new(cfg.replay_capacity),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STEP_STREAM)),
        })
    }
}

fn check_batch(batch: &Batch, res: (usize, usize), what: &str) -> Result<(ArrayD<f32>, ArrayD<f32>)> {
    let ir = batch.ir::<f32>()?;
    let rgb = batch.rgb::<f32>()?;
    let expected = [batch.len(), 3, res.0, res.1];
    if ir.shape() != expected || rgb.shape() != expected {
        return Err(Error::Shape(format!(
            "{what} batch has shape {:?}, expected {expected:?}",
            ir.shape()
        )));
    }
    Ok((ir, rgb))
}

/// Zeroes the condition of each sample with probability `p`.
fn drop_conditions<R: Rng>(rgb: &mut ArrayD<f32>, p: f64, rng: &mut R) {
    for mut sample in rgb.axis_iter_mut(Axis(0)) {
        if rng.random::<f64>() < p {
            sample.fill(0.0);
        }
    }
}

fn resized(x: &ArrayD<f32>, (h, w): (usize, usize)) -> Var<f32> {
    no_grad(|| Var::constant(x.clone()).resize_to(h, w))
}

/// Passes each sample of `fresh` through a replay buffer.
fn replay(buf: &mut ReplayBuffer<ArrayD<f32>>, fresh: &ArrayD<f32>, rng: &mut ChaCha8Rng) -> Result<Var<f32>> {
    let drawn: Vec<ArrayD<f32>> = fresh
        .axis_iter(Axis(0))
        .map(|s| buf.draw(s.to_owned(), rng))
        .collect();
    let views: Vec<_> = drawn.iter().map(|a| a.view()).collect();
    let stacked = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(Var::constant(stacked))
}

/// Discriminator scores, rejecting non-finite values under the name of the
/// loss term they feed.
fn scores(d: &PatchDiscriminator<f32>, x: &Var<f32>, term: &str, step: u64) -> Result<Var<f32>> {
    let s = d.forward(x)?;
    if s.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            term: term.to_string(),
            step,
        });
    }
    Ok(s)
}

/// One optimisation step on a pair of equally sized domain batches.
pub fn train_step(
    state: &mut RunState,
    fe: &FeatureExtractor<f32>,
    batch_a: &Batch,
    batch_b: &Batch,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    if batch_a.is_empty() || batch_a.len() != batch_b.len() {
        return Err(Error::Precondition(format!(
            "domain batches must be non-empty and equal in size, got {} and {}",
            batch_a.len(),
            batch_b.len()
        )));
    }
    let step = state.step + 1;
    let w = &cfg.weights;
    let p = SsimParams::default();
    let (a_arr, mut rgb_a) = check_batch(batch_a, cfg.res_a, "domain-A")?;
    let (b_arr, mut rgb_b) = check_batch(batch_b, cfg.res_b, "domain-B")?;
    drop_conditions(&mut rgb_a, cfg.rgb_dropout_p, &mut state.rng);
    drop_conditions(&mut rgb_b, cfg.rgb_dropout_p, &mut state.rng);

    let a = Var::constant(a_arr.clone());
    let b = Var::constant(b_arr.clone());
    let cond_a = Var::constant(rgb_a.clone());
    let cond_b = Var::constant(rgb_b.clone());
    let (g_ab, g_ba) = (&state.g_ab, &state.g_ba);

    let fake_b = g_ab.forward(&a, Some(&cond_a))?;
    let fake_a = g_ba.forward(&b, Some(&cond_b))?;
    let rec_a = g_ba.forward(&fake_b, Some(&resized(&rgb_a, cfg.res_b)))?;
    let rec_b = g_ab.forward(&fake_a, Some(&resized(&rgb_b, cfg.res_a)))?;
    let idt_b = g_ab.forward(&b, Some(&cond_b))?;
    let idt_a = g_ba.forward(&a, Some(&cond_a))?;
    let (_, _, hb2, wb2) = idt_b.dims4();
    let (_, _, ha2, wa2) = idt_a.dims4();

    let (gan_ab, gan_ba) = frozen_params(|| -> Result<_> {
        Ok((
            generator_adversarial(&scores(&state.d_b, &fake_b, "gan_ab", step)?)?,
            generator_adversarial(&scores(&state.d_a, &fake_a, "gan_ba", step)?)?,
        ))
    })?;
    let cyc = cycle_loss(&a, &rec_a, &b, &rec_b)?;
    let id = identity_loss(&idt_b, &resized(&b_arr, (hb2, wb2)), &idt_a, &resized(&a_arr, (ha2, wa2)))?;
    let ssim = ssim_loss(&a, &rec_a, &p)?.add(&ssim_loss(&b, &rec_b, &p)?);
    let perc = perceptual_loss(&a, &fake_a, &b, &fake_b, fe, w.lambda_dssim, &p)?;

    let mut terms = TermValues {
        gan_ab: gan_ab.item() as f64,
        gan_ba: gan_ba.item() as f64,
        cyc: cyc.item() as f64,
        id: id.item() as f64,
        ssim: ssim.item() as f64,
        perc: perc.total.item() as f64,
        dssim: perc.dssim.item() as f64,
        d_a: 0.0,
        d_b: 0.0,
    };
    total_objectives(&terms, w, step)?;

    let total_g = gan_ab
        .add(&gan_ba)
        .mul_scalar(w.w_gan)
        .add(&cyc.mul_scalar(w.w_cyc))
        .add(&id.mul_scalar(w.w_id))
        .add(&ssim.mul_scalar(w.w_ssim))
        .add(&perc.total.mul_scalar(w.w_perc));
    let grads = total_g.backward();
    state.opt_g_ab.step(state.g_ab.params_mut(), &grads);
    state.opt_g_ba.step(state.g_ba.params_mut(), &grads);
    drop(grads);

    let pool_b = replay(&mut state.buf_b, fake_b.value(), &mut state.rng)?;
    let pool_a = replay(&mut state.buf_a, fake_a.value(), &mut state.rng)?;
    let d_b_loss = discriminator_adversarial(
        &scores(&state.d_b, &b, "total_d_b", step)?,
        &scores(&state.d_b, &pool_b, "total_d_b", step)?,
    )?;
    let d_a_loss = discriminator_adversarial(
        &scores(&state.d_a, &a, "total_d_a", step)?,
        &scores(&state.d_a, &pool_a, "total_d_a", step)?,
    )?;
    terms.d_a = d_a_loss.item() as f64;
    terms.d_b = d_b_loss.item() as f64;
    let report = total_objectives(&terms, w, step)?;

    let grads = d_a_loss.add(&d_b_loss).backward();
    state.opt_d_a.step(state.d_a.params_mut(), &grads);
    state.opt_d_b.step(state.d_b.params_mut(), &grads);

    state.step = step;
    Ok(report)
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: u64,
    pub gan_ab: f64,
    pub gan_ba: f64,
    pub cyc: f64,
    pub id: f64,
    pub ssim: f64,
    pub perc: f64,
    pub total_g: f64,
    pub total_d_a: f64,
    pub total_d_b: f64,
    pub wall_time_s: Option<f64>,
}

impl MetricsRecord {
    fn new(step: u64, epoch: u64, r: &LossReport, wall_time_s: Option<f64>) -> Self {
        MetricsRecord {
            step,
            epoch,
            gan_ab: r.gan_ab,
            gan_ba: r.gan_ba,
            cyc: r.cyc,
            id: r.id,
            ssim: r.ssim,
            perc: r.perc,
            total_g: r.total_g,
            total_d_a: r.total_d_a,
            total_d_b: r.total_d_b,
            wall_time_s,
        }
    }
}

/// Reads every record of a metrics file.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::InvalidValue(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Outcome of [`Trainer::run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub steps: u64,
    pub steps_per_epoch: u64,
    pub last_report: Option<LossReport>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Steps per epoch under zip-shortest pairing of the two training streams.
pub fn steps_per_epoch(manifest: &DatasetManifest, batch_size: usize) -> Result<u64> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let na = manifest.require(Domain::A, Split::Train)?.len();
    let nb = manifest.require(Domain::B, Split::Train)?.len();
    Ok(na.div_ceil(batch_size).min(nb.div_ceil(batch_size)) as u64)
}

/// Owns the run directory, the frozen extractor and the run state.
pub struct Trainer {
    cfg: TrainConfig,
    run_dir: PathBuf,
    fe: FeatureExtractor<f32>,
    state: RunState,
    wall_offset: f64,
    last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    /// Starts a fresh run in `run_dir`, writing `config.snapshot`.
    pub fn new(cfg: TrainConfig, run_dir: &Path) -> Result<Self> {
        cfg.validate()?;
        let fe = build_extractor(cfg.train_backbone, &cfg.train_backbone_stage, cfg.train_backbone_weights.as_deref())?;
        let state = RunState::new(&cfg)?;
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let snap = run_dir.join("config.snapshot");
        fs::write(&snap, cfg.to_text()).map_err(|e| Error::io(&snap, e))?;
        let metrics = run_dir.join("metrics.jsonl");
        File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
        Ok(Trainer {
            cfg,
            run_dir: run_dir.to_path_buf(),
            fe,
            state,
            wall_offset: 0.0,
            last_checkpoint: None,
        })
    }

    /// Continues the run in `run_dir` from its latest checkpoint. Metrics
    /// records past that checkpoint are discarded.
    pub fn resume(run_dir: &Path) -> Result<Self> {
        let cfg = TrainConfig::from_file(&run_dir.join("config.snapshot"))?;
        let dir = checkpoint::latest_checkpoint(run_dir)?
            .ok_or_else(|| Error::Checkpoint(format!("{}: no checkpoint to resume from", run_dir.display())))?;
        let (state, meta) = checkpoint::load_state(&dir, &cfg)?;
        let fe = build_extractor(cfg.train_backbone, &cfg.train_backbone_stage, cfg.train_backbone_weights.as_deref())?;

        let metrics = run_dir.join("metrics.jsonl");
        let kept: Vec<String> = match File::open(&metrics) {
            Ok(f) => BufReader::new(f)
                .lines()
                .map_while(|l| l.ok())
                .filter(|l| {
                    serde_json::from_str::<MetricsRecord>(l).is_ok_and(|r| r.step <= state.step)
                })
                .collect(),
            Err(_) => Vec::new(),
        };
        let mut f = File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
        for l in kept {
            writeln!(f, "{l}").map_err(|e| Error::io(&metrics, e))?;
        }
        Ok(Trainer {
            cfg,
            run_dir: run_dir.to_path_buf(),
            fe,
            state,
            wall_offset: meta.wall_time_s,
            last_checkpoint: Some(dir),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn extractor(&self) -> &FeatureExtractor<f32> {
        &self.fe
    }

    /// Trains until all epochs are done. `max_steps` stops early after that
    /// many steps of this call, without a final checkpoint, as an
    /// interrupted process would.
    pub fn run(&mut self, manifest: &DatasetManifest, max_steps: Option<u64>) -> Result<RunSummary> {
        let spe = steps_per_epoch(manifest, self.cfg.batch_size)?;
        let total = spe * self.cfg.epochs as u64;
        let metrics_path = self.run_dir.join("metrics.jsonl");
        let mut metrics = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?;
        let start = Instant::now();
        let wall = |offset: f64| offset + start.elapsed().as_secs_f64();
        let mut done = 0u64;
        let mut last_report = None;

        'epochs: while self.state.step < total {
            let epoch = self.state.step / spe;
            let skip = (self.state.step % spe) as usize;
            let seed = self.cfg.seed;
            let bs = self.cfg.batch_size;
            let stream_a = batches(manifest, Domain::A, Split::Train, bs, shuffle_seed(seed, epoch, Domain::A), self.cfg.res_a)?;
            let stream_b = batches(manifest, Domain::B, Split::Train, bs, shuffle_seed(seed, epoch, Domain::B), self.cfg.res_b)?;
            for (ba, bb) in stream_a.zip(stream_b).skip(skip) {
                let (mut ba, mut bb) = (ba?, bb?);
                let n = ba.len().min(bb.len());
                ba.samples.truncate(n);
                bb.samples.truncate(n);
                self.state.epoch = epoch;
                let report = train_step(&mut self.state, &self.fe, &ba, &bb, &self.cfg)?;
                let t = self.cfg.log_wall_time.then(|| wall(self.wall_offset));
                let rec = MetricsRecord::new(self.state.step, epoch, &report, t);
                let line = serde_json::to_string(&rec).map_err(|e| Error::InvalidValue(e.to_string()))?;
                writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
                log::info!(
                    "step {} epoch {epoch}: total_g {:.4} cyc {:.4} d_a {:.4} d_b {:.4}",
                    self.state.step,
                    report.total_g,
                    report.cyc,
                    report.total_d_a,
                    report.total_d_b
                );
                last_report = Some(report);
                done += 1;
                let every = self.cfg.checkpoint_every;
                if (every > 0 && self.state.step % every == 0) || self.state.step == total {
                    self.last_checkpoint =
                        Some(checkpoint::save(&self.run_dir, &self.state, &self.cfg, wall(self.wall_offset))?);
                }
                if max_steps.is_some_and(|m| done >= m) {
                    break 'epochs;
                }
            }
        }
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
        Ok(RunSummary {
            run_dir: self.run_dir.clone(),
            steps: self.state.step,
            steps_per_epoch: spe,
            last_report,
            last_checkpoint: self.last_checkpoint.clone(),
        })
    }
}

/// Runs a full training from scratch into `run_dir`.
pub fn train(manifest: &DatasetManifest, cfg: &TrainConfig, run_dir: &Path) -> Result<RunSummary> {
    steps_per_epoch(manifest, cfg.batch_size)?;
    Trainer::new(cfg.clone(), run_dir)?.run(manifest, None)
}
