use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::replay::ReplayBuffer;
use super::{RunState, TrainConfig};
use crate::autograd::Module;
use crate::error::{Error, Result};
use crate::networks::{weights, BackboneKind, Direction, Generator, GeneratorConfig, PatchDiscriminator};

pub const FORMAT_VERSION: u32 = 1;
const META: &str = "meta.json";

/// What produces domain-B images from a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatorKind {
    /// The trained A→B generator.
    Network,
    /// Harness self-test: returns the reference resized to the output size.
    ResizeOfReference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint("malformed rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub translator: TranslatorKind,
    pub step: u64,
    pub epoch: u64,
    pub res_a: (usize, usize),
    pub res_b: (usize, usize),
    pub generator_ab: Option<GeneratorConfig>,
    pub generator_ba: Option<GeneratorConfig>,
    pub disc_width: usize,
    pub replay_capacity: usize,
    pub eval_backbone: BackboneKind,
    pub eval_backbone_stage: String,
    pub eval_backbone_weights: Option<PathBuf>,
    pub rng: Option<RngState>,
    pub wall_time_s: f64,
}

impl CheckpointMeta {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(META);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format version {}",
                path.display(),
                meta.format_version
            )));
        }
        if meta.translator == TranslatorKind::Network && meta.generator_ab.is_none() {
            return Err(Error::Checkpoint(format!("{}: missing generator_ab config", path.display())));
        }
        Ok(meta)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(META);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// `checkpoints/step_<N>` under a run directory.
pub fn step_dir(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("step_{step}"))
}

fn latest_in(dir: &Path) -> Result<Option<PathBuf>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(dir, e)),
    };
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(n) = name.to_str().and_then(|s| s.strip_prefix("step_")).and_then(|s| s.parse().ok()) else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, entry.path()));
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Latest checkpoint of a run directory, if any.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    latest_in(&run_dir.join("checkpoints"))
}

/// Accepts a checkpoint directory, a `checkpoints/` directory or a run
/// directory and returns the checkpoint directory to load.
pub fn resolve(path: &Path) -> Result<PathBuf> {
    if path.join(META).is_file() {
        return Ok(path.to_path_buf());
    }
    if let Some(p) = latest_checkpoint(path)? {
        return Ok(p);
    }
    if let Some(p) = latest_in(path)? {
        return Ok(p);
    }
    Err(Error::Checkpoint(format!("{}: no checkpoint found", path.display())))
}

fn save_replay(path: &Path, a: &ReplayBuffer<ArrayD<f32>>, b: &ReplayBuffer<ArrayD<f32>>) -> Result<()> {
    let names: Vec<(String, &ArrayD<f32>)> = a
        .items()
        .iter()
        .enumerate()
        .map(|(i, x)| (format!("a.{i}"), x))
        .chain(b.items().iter().enumerate().map(|(i, x)| (format!("b.{i}"), x)))
        .collect();
    let tensors: Vec<(&str, &ArrayD<f32>)> = names.iter().map(|(n, x)| (n.as_str(), *x)).collect();
    let bytes = weights::to_bytes(&tensors, None)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_replay(path: &Path, capacity: usize) -> Result<(ReplayBuffer<ArrayD<f32>>, ReplayBuffer<ArrayD<f32>>)> {
    let tensors = weights::read_all::<f32>(path)?;
    let mut a: Vec<(usize, ArrayD<f32>)> = Vec::new();
    let mut b: Vec<(usize, ArrayD<f32>)> = Vec::new();
    for (name, arr) in tensors {
        let bad = || Error::Checkpoint(format!("{}: unexpected tensor '{name}'", path.display()));
        let (side, idx) = name.split_once('.').ok_or_else(bad)?;
        let idx: usize = idx.parse().map_err(|_| bad())?;
        match side {
            "a" => a.push((idx, arr)),
            "b" => b.push((idx, arr)),
            _ => return Err(bad()),
        }
    }
    a.sort_by_key(|(i, _)| *i);
    b.sort_by_key(|(i, _)| *i);
    Ok((
        ReplayBuffer::with_items(capacity, a.into_iter().map(|(_, x)| x).collect()),
        ReplayBuffer::with_items(capacity, b.into_iter().map(|(_, x)| x).collect()),
    ))
}

/// Writes the full run state to `checkpoints/step_<N>` through a temporary
/// directory and a rename.
pub fn save(run_dir: &Path, state: &RunState, cfg: &TrainConfig, wall_time_s: f64) -> Result<PathBuf> {
    let dest = step_dir(run_dir, state.step);
    let parent = dest.parent().expect("step dir has a parent");
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(".step_{}.tmp", state.step));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;

    weights::save(&state.g_ab.params(), &tmp.join("g_ab.safetensors"))?;
    weights::save(&state.g_ba.params(), &tmp.join("g_ba.safetensors"))?;
    weights::save(&state.d_a.params(), &tmp.join("d_a.safetensors"))?;
    weights::save(&state.d_b.params(), &tmp.join("d_b.safetensors"))?;
    state.opt_g_ab.save(&tmp.join("opt_g_ab.safetensors"))?;
    state.opt_g_ba.save(&tmp.join("opt_g_ba.safetensors"))?;
    state.opt_d_a.save(&tmp.join("opt_d_a.safetensors"))?;
    state.opt_d_b.save(&tmp.join("opt_d_b.safetensors"))?;
    save_replay(&tmp.join("replay.safetensors"), &state.buf_a, &state.buf_b)?;
    CheckpointMeta {
        format_version: FORMAT_VERSION,
        translator: TranslatorKind::Network,
        step: state.step,
        epoch: state.epoch,
        res_a: cfg.res_a,
        res_b: cfg.res_b,
        generator_ab: Some(*state.g_ab.config()),
        generator_ba: Some(*state.g_ba.config()),
        disc_width: state.d_a.width(),
        replay_capacity: cfg.replay_capacity,
        eval_backbone: cfg.eval_backbone,
        eval_backbone_stage: cfg.eval_backbone_stage.clone(),
        eval_backbone_weights: cfg.eval_backbone_weights.clone(),
        rng: Some(RngState::capture(&state.rng)),
        wall_time_s,
    }
    .write(&tmp)?;

    if dest.exists() {
        fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
    }
    fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
    Ok(dest)
}

/// Generator loaded from `<dir>/<file>` using the stored config.
pub fn load_generator(dir: &Path, file: &str, config: GeneratorConfig) -> Result<Generator<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = Generator::new(config, &mut rng).map_err(|e| Error::Checkpoint(e.to_string()))?;
    weights::load_into(&mut g.params_mut(), &dir.join(file), true)?;
    Ok(g)
}

fn load_discriminator(dir: &Path, file: &str, width: usize) -> Result<PatchDiscriminator<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut d = PatchDiscriminator::new(width, &mut rng);
    weights::load_into(&mut d.params_mut(), &dir.join(file), true)?;
    Ok(d)
}

/// Restores a full run state from a checkpoint directory.
pub fn load_state(dir: &Path, cfg: &TrainConfig) -> Result<(RunState, CheckpointMeta)> {
    let meta = CheckpointMeta::read(dir)?;
    if meta.translator != TranslatorKind::Network {
        return Err(Error::Checkpoint(format!("{}: not a training checkpoint", dir.display())));
    }
    let missing = |what: &str| Error::Checkpoint(format!("{}: missing {what}", dir.display()));
    let cfg_ab = meta.generator_ab.ok_or_else(|| missing("generator_ab"))?;
    let cfg_ba = meta.generator_ba.ok_or_else(|| missing("generator_ba"))?;
    if cfg_ab != cfg.generator_config(Direction::AB) || cfg_ba != cfg.generator_config(Direction::BA) {
        return Err(Error::Checkpoint(format!(
            "{}: generator configuration differs from the run config",
            dir.display()
        )));
    }
    let adam = |file: &str| -> Result<Adam> {
        let mut opt = Adam::new(cfg.learning_rate, cfg.betas.0, cfg.betas.1);
        opt.load(&dir.join(file))?;
        Ok(opt)
    };
    let (buf_a, buf_b) = load_replay(&dir.join("replay.safetensors"), cfg.replay_capacity)?;
    let state = RunState {
        step: meta.step,
        epoch: meta.epoch,
        g_ab: load_generator(dir, "g_ab.safetensors", cfg_ab)?,
        g_ba: load_generator(dir, "g_ba.safetensors", cfg_ba)?,
        d_a: load_discriminator(dir, "d_a.safetensors", meta.disc_width)?,
        d_b: load_discriminator(dir, "d_b.safetensors", meta.disc_width)?,
        opt_g_ab: adam("opt_g_ab.safetensors")?,
        opt_g_ba: adam("opt_g_ba.safetensors")?,
        opt_d_a: adam("opt_d_a.safetensors")?,
        opt_d_b: adam("opt_d_b.safetensors")?,
        buf_a,
        buf_b,
        rng: meta.rng.as_ref().ok_or_else(|| missing("rng state"))?.restore()?,
    };
    Ok((state, meta))
}

/// Writes a checkpoint whose translator returns the reference image resized
/// to the domain-B resolution. Evaluating it must give SSIM 1 and L_phi 0.
pub fn write_self_test(dir: &Path, res_a: (usize, usize), res_b: (usize, usize)) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = TrainConfig::default();
    CheckpointMeta {
        format_version: FORMAT_VERSION,
        translator: TranslatorKind::ResizeOfReference,
        step: 0,
        epoch: 0,
        res_a,
        res_b,
        generator_ab: None,
        generator_ba: None,
        disc_width: cfg.disc_width,
        replay_capacity: 0,
        eval_backbone: cfg.eval_backbone,
        eval_backbone_stage: cfg.eval_backbone_stage,
        eval_backbone_weights: None,
        rng: None,
        wall_time_s: 0.0,
    }
    .write(dir)
}
