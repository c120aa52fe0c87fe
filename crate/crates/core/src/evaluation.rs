//! Test-set metrics (mean SSIM and feature distance against domain-B
//! references) and qualitative comparison grids.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_sample, DatasetManifest, Domain, PairedSample, Split};
use crate::error::{Error, Result};
use crate::imaging::{resize_to, ssim_map, ImageTensor, SsimParams};
use crate::networks::{FeatureExtractor, Generator};
use crate::training::build_extractor;
use crate::training::checkpoint::{self, CheckpointMeta, TranslatorKind};

/// Column order of [`qualitative_grid`].
pub const GRID_COLUMNS: [&str; 4] = ["input_rgb", "input_ir", "output", "reference_ir"];
/// Gap between grid cells in pixels.
pub const GRID_GAP: usize = 2;

/// Maps a domain-A image to domain-B resolution.
#[derive(Debug, Clone)]
pub enum Translator {
    Network(Generator<f32>),
    /// Returns the reference itself, resized. Used as a harness self-test.
    ResizeOfReference,
    /// Bilinear upscaling of the input; the no-learning baseline.
    Bilinear,
}

impl Translator {
    /// Output for domain-A image `ir` with the all-zero condition.
    pub fn apply(&self, ir: &ImageTensor, reference: &ImageTensor) -> Result<ImageTensor> {
        let (h, w) = (reference.height(), reference.width());
        let out = match self {
            Translator::Network(g) => g.translate(ir, None)?,
            Translator::ResizeOfReference => resize_to(reference, h, w)?,
            Translator::Bilinear => resize_to(ir, h, w)?,
        };
        if (out.height(), out.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "translator output {}x{} does not match reference {h}x{w}",
                out.height(),
                out.width()
            )));
        }
        Ok(out)
    }
}

/// A checkpoint opened for inference.
#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub dir: PathBuf,
    pub meta: CheckpointMeta,
    pub translator: Translator,
}

impl LoadedCheckpoint {
    /// Opens a checkpoint, `checkpoints/` or run directory. Only the A→B
    /// generator is read.
    pub fn load(path: &Path) -> Result<Self> {
        let dir = checkpoint::resolve(path)?;
        let meta = CheckpointMeta::read(&dir)?;
        let translator = match meta.translator {
            TranslatorKind::ResizeOfReference => Translator::ResizeOfReference,
            TranslatorKind::Network => {
                let cfg = meta
                    .generator_ab
                    .ok_or_else(|| Error::Checkpoint(format!("{}: missing generator_ab", dir.display())))?;
                Translator::Network(checkpoint::load_generator(&dir, "g_ab.safetensors", cfg)?)
            }
        };
        Ok(LoadedCheckpoint { dir, meta, translator })
    }

    /// The evaluation backbone recorded in the checkpoint.
    pub fn eval_extractor(&self) -> Result<FeatureExtractor<f32>> {
        build_extractor(
            self.meta.eval_backbone,
            &self.meta.eval_backbone_stage,
            self.meta.eval_backbone_weights.as_deref(),
        )
    }
}

/// A domain-A input with its domain-B reference.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub input: PairedSample,
    pub reference: PairedSample,
}

/// Pairs every domain-A row of `split` with its domain-B counterpart,
/// decoding inputs at `res_a` and references at `res_b`. Returns the pairs
/// and the number of inputs without a reference.
pub fn evaluation_pairs(
    manifest: &DatasetManifest,
    split: Split,
    res_a: (usize, usize),
    res_b: (usize, usize),
) -> Result<(Vec<EvalPair>, usize)> {
    let rows = manifest.require(Domain::A, split)?;
    let mut pairs = Vec::with_capacity(rows.len());
    let mut skipped = 0;
    for row in rows {
        let Some(other) = manifest.counterpart(row) else {
            log::warn!("sample '{}' has no domain-B reference; skipped", row.sample_id);
            skipped += 1;
            continue;
        };
        pairs.push(EvalPair {
            input: load_sample(row, res_a)?,
            reference: load_sample(other, res_b)?,
        });
    }
    Ok((pairs, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub id: String,
    pub ssim: f64,
    pub l_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<EvalSample>,
    pub avg_ssim: f64,
    pub avg_l_phi: f64,
    pub n: usize,
    pub skipped: usize,
}

#[derive(Serialize)]
struct Aggregates<'a> {
    avg_ssim: f64,
    avg_l_phi: f64,
    n: usize,
    skipped: usize,
    split: &'a str,
}

impl EvalReport {
    pub fn from_samples(samples: Vec<EvalSample>, skipped: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset("no evaluation sample has a reference".into()));
        }
        let n = samples.len();
        let avg_ssim = samples.iter().map(|s| s.ssim).sum::<f64>() / n as f64;
        let avg_l_phi = samples.iter().map(|s| s.l_phi).sum::<f64>() / n as f64;
        Ok(EvalReport {
            samples,
            avg_ssim,
            avg_l_phi,
            n,
            skipped,
        })
    }

    /// The stdout summary, e.g. `avg_ssim=0.8123 avg_l_phi=0.0456`.
    pub fn summary_line(&self) -> String {
        format!("avg_ssim={:.4} avg_l_phi={:.4}", self.avg_ssim, self.avg_l_phi)
    }

    /// Writes `eval.json` and `eval_samples.csv` into `dir`.
    pub fn write(&self, dir: &Path, split: Split) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("eval.json");
        let split = split.to_string();
        let agg = Aggregates {
            avg_ssim: self.avg_ssim,
            avg_l_phi: self.avg_l_phi,
            n: self.n,
            skipped: self.skipped,
            split: &split,
        };
        let text = serde_json::to_string_pretty(&agg).map_err(|e| Error::InvalidValue(e.to_string()))?;
        fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;

        let csv_path = dir.join("eval_samples.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Io {
            path: csv_path.clone(),
            source: e.into(),
        })?;
        let io = |e: csv::Error| Error::Io {
            path: csv_path.clone(),
            source: e.into(),
        };
        w.write_record(["id", "ssim", "l_phi"]).map_err(io)?;
        for s in &self.samples {
            w.write_record([s.id.clone(), s.ssim.to_string(), s.l_phi.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }
}

/// Mean absolute difference of two feature arrays.
fn feature_distance(fe: &FeatureExtractor<f32>, x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    let (fx, fy) = (fe.extract(x)?, fe.extract(y)?);
    Ok((&fx - &fy).mapv(f64::abs).mean().unwrap_or(0.0))
}

/// Scores each pair: SSIM against the reference at its resolution and the
/// mean L1 distance of `fe` features.
pub fn evaluate_pairs(
    translator: &Translator,
    fe: &FeatureExtractor<f32>,
    pairs: &[EvalPair],
    skipped: usize,
) -> Result<EvalReport> {
    let p = SsimParams::default();
    let samples = pairs
        .iter()
        .map(|pair| {
            let out = translator.apply(&pair.input.ir, &pair.reference.ir)?;
            Ok(EvalSample {
                id: pair.input.id.clone(),
                ssim: ssim_map(&out, &pair.reference.ir, &p)?,
                l_phi: feature_distance(fe, &out, &pair.reference.ir)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_samples(samples, skipped)
}

/// Evaluates a checkpoint on the paired rows of `split`.
pub fn evaluate(ckpt: &LoadedCheckpoint, manifest: &DatasetManifest, split: Split) -> Result<EvalReport> {
    let (pairs, skipped) = evaluation_pairs(manifest, split, ckpt.meta.res_a, ckpt.meta.res_b)?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "all {skipped} {split} samples lack a domain-B reference"
        )));
    }
    evaluate_pairs(&ckpt.translator, &ckpt.eval_extractor()?, &pairs, skipped)
}

/// Pixel size of a grid with `rows` rows of `(h, w)` cells.
pub fn grid_dims(rows: usize, (h, w): (usize, usize)) -> (usize, usize) {
    let cols = GRID_COLUMNS.len();
    (rows * h + (rows + 1) * GRID_GAP, cols * w + (cols + 1) * GRID_GAP)
}

/// Writes a PNG with one row per pair and the columns of [`GRID_COLUMNS`],
/// each cell at the reference resolution. The column schema is stored in a
/// `columns` text chunk.
pub fn qualitative_grid(translator: &Translator, pairs: &[EvalPair], out_path: &Path) -> Result<()> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Precondition("a grid needs at least one sample".into()))?;
    let (ch, cw) = (first.reference.ir.height(), first.reference.ir.width());
    let (gh, gw) = grid_dims(pairs.len(), (ch, cw));
    let mut pixels = vec![255u8; gh * gw * 3];
    for (r, pair) in pairs.iter().enumerate() {
        let cells = [
            resize_to(&pair.input.rgb, ch, cw)?,
            resize_to(&pair.input.ir, ch, cw)?,
            translator.apply(&pair.input.ir, &pair.reference.ir)?,
            resize_to(&pair.reference.ir, ch, cw)?,
        ];
        for (c, cell) in cells.iter().enumerate() {
            let (y0, x0) = (GRID_GAP + r * (ch + GRID_GAP), GRID_GAP + c * (cw + GRID_GAP));
            let d = cell.data();
            let grey = cell.channels() == 1;
            for y in 0..ch {
                for x in 0..cw {
                    for k in 0..3 {
                        let v = d[[if grey { 0 } else { k }, y, x]];
                        pixels[((y0 + y) * gw + x0 + x) * 3 + k] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                    }
                }
            }
        }
    }
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let png_err = |e: png::EncodingError| Error::Io {
        path: out_path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut enc = png::Encoder::new(BufWriter::new(file), gw as u32, gh as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Balanced);
    enc.add_text_chunk("columns".into(), GRID_COLUMNS.join(",")).map_err(png_err)?;
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}
