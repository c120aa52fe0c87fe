//! Manifest-driven loading of paired IR/RGB imagery and the synthetic fixture.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb};
use ndarray::{Array2, Array3, ArrayD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::imaging::{resize, resize_to, ImageTensor};

pub const MANIFEST_HEADER: [&str; 5] = ["sample_id", "domain", "ir_path", "rgb_path", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::A => "A",
            Domain::B => "B",
        })
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "A" | "a" => Ok(Domain::A),
            "B" | "b" => Ok(Domain::B),
            other => Err(format!("unknown domain '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub sample_id: String,
    pub domain: Domain,
    pub ir_path: PathBuf,
    pub rgb_path: Option<PathBuf>,
    pub split: Split,
}

impl ManifestRow {
    /// Identifier shared by the two halves of an aligned A/B pair: the sample
    /// id with a trailing `_a`/`_b` (or `_A`/`_B`) removed.
    pub fn pair_key(&self) -> &str {
        pair_key(&self.sample_id)
    }
}

pub fn pair_key(id: &str) -> &str {
    for suffix in ["_a", "_b", "_A", "_B"] {
        if let Some(stem) = id.strip_suffix(suffix) {
            return stem;
        }
    }
    id
}

/// Validated manifest. Relative paths are resolved against the manifest's
/// directory at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    /// Builds a manifest from rows, checking id uniqueness and file existence.
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in rows.iter().enumerate() {
            let row = i + 1;
            if !seen.insert(r.sample_id.clone()) {
                return Err(Error::DuplicateId {
                    id: r.sample_id.clone(),
                    row,
                });
            }
            for p in std::iter::once(&r.ir_path).chain(r.rgb_path.iter()) {
                if !p.is_file() {
                    return Err(Error::DanglingPath { row, path: p.clone() });
                }
            }
        }
        Ok(DatasetManifest { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn select(&self, domain: Domain, split: Split) -> Vec<&ManifestRow> {
        self.rows
            .iter()
            .filter(|r| r.domain == domain && r.split == split)
            .collect()
    }

    /// Like [`select`](Self::select) but errors on an empty selection.
    pub fn require(&self, domain: Domain, split: Split) -> Result<Vec<&ManifestRow>> {
        let rows = self.select(domain, split);
        if rows.is_empty() {
            return Err(Error::EmptyDataset(format!("no {split} rows for domain {domain}")));
        }
        Ok(rows)
    }

    /// The domain-B row aligned with a domain-A row, if any.
    pub fn counterpart(&self, row: &ManifestRow) -> Option<&ManifestRow> {
        let key = row.pair_key();
        self.rows
            .iter()
            .find(|r| r.domain != row.domain && r.sample_id != row.sample_id && r.pair_key() == key)
    }

    /// Writes the manifest as CSV with paths relative to `path`'s directory
    /// where possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let rel = |p: &Path| -> String {
            p.strip_prefix(&base)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/")
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| csv_io(path, e))?;
        w.write_record(MANIFEST_HEADER).map_err(|e| csv_io(path, e))?;
        for r in &self.rows {
            let domain = r.domain.to_string();
            let split = r.split.to_string();
            let ir = rel(&r.ir_path);
            let rgb = r.rgb_path.as_deref().map(rel).unwrap_or_default();
            w.write_record([r.sample_id.as_str(), &domain, &ir, &rgb, &split])
                .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Manifest {
            path: path.to_path_buf(),
            row: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Reads and validates a manifest CSV.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let bad = |row: usize, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let header = rdr.headers().map_err(|e| bad(0, e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != MANIFEST_HEADER {
        return Err(bad(
            0,
            format!("header must be '{}', got '{}'", MANIFEST_HEADER.join(","), names.join(",")),
        ));
    }
    let resolve = |s: &str| {
        let p = PathBuf::from(s);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| bad(row, e.to_string()))?;
        if rec.len() != 5 {
            return Err(bad(row, format!("expected 5 fields, found {}", rec.len())));
        }
        let f: Vec<&str> = rec.iter().map(str::trim).collect();
        if f[0].is_empty() {
            return Err(bad(row, "empty sample_id".into()));
        }
        if f[2].is_empty() {
            return Err(bad(row, "empty ir_path".into()));
        }
        rows.push(ManifestRow {
            sample_id: f[0].to_string(),
            domain: f[1].parse().map_err(|m| bad(row, m))?,
            ir_path: resolve(f[2]),
            rgb_path: (!f[3].is_empty()).then(|| resolve(f[3])),
            split: f[4].parse().map_err(|m| bad(row, m))?,
        });
    }
    DatasetManifest::new(rows)
}

/// Decodes an image file to a 3-channel tensor in `[0, 1]`, dividing by the
/// maximum of the source bit depth. Grayscale inputs are replicated.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let decode = |msg: String| Error::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Dimension(format!("{} has zero area", path.display())));
    }
    let data = match &img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => {
            let buf = img.to_rgb8();
            Array3::from_shape_fn((3, h, w), |(c, y, x)| {
                buf.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
            })
        }
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => {
            let buf = img.to_rgb16();
            Array3::from_shape_fn((3, h, w), |(c, y, x)| {
                buf.get_pixel(x as u32, y as u32)[c] as f64 / 65535.0
            })
        }
        _ => {
            let buf = img.to_rgb32f();
            Array3::from_shape_fn((3, h, w), |(c, y, x)| {
                (buf.get_pixel(x as u32, y as u32)[c] as f64).clamp(0.0, 1.0)
            })
        }
    };
    ImageTensor::new(data)
}

/// Bit depth of encoded PNG files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Writes a 3-channel `[0, 1]` tensor as an RGB PNG.
pub fn save_png(img: &ImageTensor, path: &Path, depth: BitDepth) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!("PNG export needs 3 channels, got {}", img.channels())));
    }
    let (lo, hi) = img.range();
    let (h, w) = (img.height() as u32, img.width() as u32);
    let d = img.data();
    let unit = |c: usize, x: u32, y: u32| ((d[[c, y as usize, x as usize]] - lo) / (hi - lo)).clamp(0.0, 1.0);
    let dynamic = match depth {
        BitDepth::Eight => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w, h, |x, y| {
            Rgb([0, 1, 2].map(|c| (unit(c, x, y) * 255.0).round() as u8))
        })),
        BitDepth::Sixteen => DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_fn(w, h, |x, y| {
            Rgb([0, 1, 2].map(|c| (unit(c, x, y) * 65535.0).round() as u16))
        })),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    dynamic
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                msg: other.to_string(),
            },
        })
}

/// One decoded sample. `rgb` is all zeros when the row has no RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub domain: Domain,
    pub ir: ImageTensor,
    pub rgb: ImageTensor,
}

impl PairedSample {
    /// Whether the RGB condition is the all-zero sentinel.
    pub fn rgb_is_zero(&self) -> bool {
        self.rgb.is_zero()
    }
}

/// Decodes a row and resizes both images to `(h, w)`.
pub fn load_sample(row: &ManifestRow, (h, w): (usize, usize)) -> Result<PairedSample> {
    if h == 0 || w == 0 {
        return Err(Error::Dimension(format!("target resolution {h}x{w} has zero area")));
    }
    let ir = resize_to(&load_image(&row.ir_path)?, h, w)?;
    let rgb = match &row.rgb_path {
        Some(p) => resize_to(&load_image(p)?, h, w)?,
        None => ImageTensor::zeros(3, h, w),
    };
    Ok(PairedSample {
        id: row.sample_id.clone(),
        domain: row.domain,
        ir,
        rgb,
    })
}

/// Samples of one domain at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: Vec<PairedSample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    /// IR images stacked into (N, 3, H, W).
    pub fn ir<T: Float>(&self) -> Result<ArrayD<T>> {
        ImageTensor::stack(&self.samples.iter().map(|s| &s.ir).collect::<Vec<_>>())
    }

    /// RGB conditions stacked into (N, 3, H, W).
    pub fn rgb<T: Float>(&self) -> Result<ArrayD<T>> {
        ImageTensor::stack(&self.samples.iter().map(|s| &s.rgb).collect::<Vec<_>>())
    }
}

/// Deterministic permutation of `0..n` for a shuffle seed.
pub fn epoch_order(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Lazily decoded batch stream over one domain and split.
#[derive(Debug, Clone)]
pub struct Batches {
    rows: Vec<ManifestRow>,
    order: Vec<usize>,
    batch_size: usize,
    resolution: (usize, usize),
    pos: usize,
}

impl Batches {
    /// Number of batches in one pass, including a final partial batch.
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Sample ids in stream order.
    pub fn order_ids(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.rows[i].sample_id.as_str()).collect()
    }
}

impl Iterator for Batches {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let samples = self.order[self.pos..end]
            .iter()
            .map(|&i| load_sample(&self.rows[i], self.resolution))
            .collect::<Result<Vec<_>>>();
        self.pos = end;
        Some(samples.map(|samples| Batch { samples }))
    }
}

/// One shuffled pass over the rows of `domain` in `split`.
pub fn batches(
    manifest: &DatasetManifest,
    domain: Domain,
    split: Split,
    batch_size: usize,
    shuffle_seed: u64,
    resolution: (usize, usize),
) -> Result<Batches> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let rows: Vec<ManifestRow> = manifest.require(domain, split)?.into_iter().cloned().collect();
    let order = epoch_order(rows.len(), shuffle_seed);
    Ok(Batches {
        rows,
        order,
        batch_size,
        resolution,
        pos: 0,
    })
}

/// Maps a temperature in `[0, 1]` to a colour through a fixed palette whose
/// luminance increases monotonically (black, violet, red, orange, pale yellow).
pub fn palette(t: f64) -> [f64; 3] {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [0.0, 0.0, 0.05]),
        (0.3, [0.45, 0.0, 0.55]),
        (0.55, [0.85, 0.15, 0.2]),
        (0.8, [1.0, 0.6, 0.0]),
        (1.0, [1.0, 1.0, 0.8]),
    ];
    let t = t.clamp(0.0, 1.0);
    for win in STOPS.windows(2) {
        let ((t0, c0), (t1, c1)) = (win[0], win[1]);
        if t <= t1 {
            let u = (t - t0) / (t1 - t0);
            return [0, 1, 2].map(|i| c0[i] + u * (c1[i] - c0[i]));
        }
    }
    STOPS[4].1
}

fn render(field: &Array2<f64>) -> Result<ImageTensor> {
    let (h, w) = field.dim();
    ImageTensor::new(Array3::from_shape_fn((3, h, w), |(c, y, x)| palette(field[[y, x]])[c]))
}

/// A heat source of the synthetic scene, in pixel units of the B image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub cy: f64,
    pub cx: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

/// Aligned synthetic A/B samples plus the scene that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub a: PairedSample,
    pub b: PairedSample,
    /// Clean temperature field at B resolution.
    pub temperature: Array2<f64>,
    pub blobs: Vec<Blob>,
}

fn gaussian_blur(field: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    let k: Vec<f64> = k.into_iter().map(|v| v / total).collect();
    let (h, w) = field.dim();
    // replicate padding keeps the border temperature
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let tmp: Array2<f64> = Array2::from_shape_fn((h, w), |(y, x)| {
        (-radius..=radius)
            .map(|d| k[(d + radius) as usize] * field[[y, clampi(x as isize + d, w)]])
            .sum()
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        (-radius..=radius)
            .map(|d| k[(d + radius) as usize] * tmp[[clampi(y as isize + d, h), x]])
            .sum()
    })
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Generates an aligned pair. `resolution` is the domain-B size; domain A is
/// half of it in each dimension.
///
/// B renders a clean temperature field (cold textured background plus
/// Gaussian heat blobs). A degrades the same field: blur (sigma 1.5), additive
/// noise (sigma 0.05, clipped), 2x area downscale, then rescaling so the 90th
/// percentile saturates the palette. The RGB condition shows the blobs as
/// smoke-grey silhouettes over a textured terrain.
pub fn make_synthetic_pair(seed: u64, resolution: (usize, usize), n_blobs: usize) -> Result<SyntheticPair> {
    let (h, w) = resolution;
    if h < 16 || w < 16 {
        return Err(Error::Precondition(format!("synthetic resolution {h}x{w} is below 16x16")));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Precondition(format!("synthetic resolution {h}x{w} must be even")));
    }
    if n_blobs == 0 {
        return Err(Error::Precondition("n_blobs must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = h.min(w) as f64;

    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..3.0) * std::f64::consts::TAU / h as f64,
                rng.random_range(0.5..3.0) * std::f64::consts::TAU / w as f64,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            cy: rng.random_range(0.2..0.8) * h as f64,
            cx: rng.random_range(0.2..0.8) * w as f64,
            sigma: rng.random_range(0.06..0.12) * m,
            amplitude: rng.random_range(0.5..0.85),
        })
        .collect();

    let temperature = Array2::from_shape_fn((h, w), |(y, x)| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let bg = 0.12
            + 0.04
                * waves
                    .iter()
                    .map(|&(fy, fx, ph)| (fy * yf + fx * xf + ph).sin())
                    .sum::<f64>()
                / 3.0;
        let heat: f64 = blobs
            .iter()
            .map(|b| {
                let d2 = (yf - b.cy).powi(2) + (xf - b.cx).powi(2);
                b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
            })
            .sum();
        (bg + heat).clamp(0.0, 1.0)
    });

    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let mut degraded = gaussian_blur(&temperature, 1.5);
    degraded.mapv_inplace(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0));
    let small = resize(&ImageTensor::new(degraded.insert_axis(ndarray::Axis(0)))?, 0.5)?
        .into_data()
        .index_axis_move(ndarray::Axis(0), 0);
    let p90 = percentile(small.as_slice().expect("standard layout"), 0.9).max(1e-6);
    let clipped = small.mapv(|v| (v / p90).min(1.0));

    let terrain: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(2.0..8.0) * std::f64::consts::TAU / h as f64,
                rng.random_range(2.0..8.0) * std::f64::consts::TAU / w as f64,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let grain = Normal::new(0.0, 0.03).expect("valid sigma");
    let rgb_b = Array3::from_shape_fn((h, w, 3), |_| grain.sample(&mut rng));
    let rgb_b = Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let tex: f64 = terrain.iter().map(|&(fy, fx, ph)| (fy * yf + fx * xf + ph).sin()).sum::<f64>() / 4.0;
        let base = [0.30, 0.42, 0.22][c] + 0.08 * tex + rgb_b[[y, x, c]];
        let inside = blobs
            .iter()
            .any(|b| (yf - b.cy).powi(2) + (xf - b.cx).powi(2) <= (1.5 * b.sigma).powi(2));
        if inside {
            [0.62, 0.6, 0.58][c]
        } else {
            base.clamp(0.0, 1.0)
        }
    });
    let rgb_b = ImageTensor::new(rgb_b)?;
    let rgb_a = resize(&rgb_b, 0.5)?;

    Ok(SyntheticPair {
        a: PairedSample {
            id: format!("pair_{seed}_a"),
            domain: Domain::A,
            ir: render(&clipped)?,
            rgb: rgb_a,
        },
        b: PairedSample {
            id: format!("pair_{seed}_b"),
            domain: Domain::B,
            ir: render(&temperature)?,
            rgb: rgb_b,
        },
        temperature,
        blobs,
    })
}

/// Options of [`write_synthetic_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub n_pairs: usize,
    pub seed: u64,
    /// Domain-B resolution; domain A is half of it.
    pub resolution: (usize, usize),
    pub n_blobs: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n_pairs: 16,
            seed: 0,
            resolution: (64, 64),
            n_blobs: 3,
            val_fraction: 0.05,
            test_fraction: 0.05,
        }
    }
}

/// Seed of the `i`-th pair of a synthetic dataset.
pub fn pair_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

/// Split of the `i`-th of `n` pairs: the last `ceil(test * n)` pairs are
/// test, the `ceil(val * n)` before them validation, the rest training.
pub fn synthetic_split(i: usize, n: usize, val_fraction: f64, test_fraction: f64) -> Split {
    let n_test = (test_fraction * n as f64).ceil() as usize;
    let n_val = (val_fraction * n as f64).ceil() as usize;
    if i + n_test >= n {
        Split::Test
    } else if i + n_test + n_val >= n {
        Split::Val
    } else {
        Split::Train
    }
}

/// Writes `n_pairs` synthetic pairs as 16-bit PNGs under `out` together with
/// `out/manifest.csv`, and returns the manifest path.
pub fn write_synthetic_dataset(out: &Path, opts: &SynthOptions) -> Result<PathBuf> {
    if opts.n_pairs == 0 {
        return Err(Error::Precondition("n_pairs must be at least 1".into()));
    }
    for f in [opts.val_fraction, opts.test_fraction] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Precondition(format!("split fraction {f} outside [0, 1)")));
        }
    }
    let mut rows = Vec::with_capacity(2 * opts.n_pairs);
    for i in 0..opts.n_pairs {
        let pair = make_synthetic_pair(pair_seed(opts.seed, i), opts.resolution, opts.n_blobs)?;
        let split = synthetic_split(i, opts.n_pairs, opts.val_fraction, opts.test_fraction);
        for (sample, dir, domain) in [(&pair.a, "a", Domain::A), (&pair.b, "b", Domain::B)] {
            let ir = out.join(dir).join(format!("pair_{i:04}_ir.png"));
            let rgb = out.join(dir).join(format!("pair_{i:04}_rgb.png"));
            save_png(&sample.ir, &ir, BitDepth::Sixteen)?;
            save_png(&sample.rgb, &rgb, BitDepth::Sixteen)?;
            rows.push(ManifestRow {
                sample_id: format!("pair_{i:04}_{dir}"),
                domain,
                ir_path: ir,
                rgb_path: Some(rgb),
                split,
            });
        }
    }
    let manifest = DatasetManifest::new(rows)?;
    let path = out.join("manifest.csv");
    manifest.write(&path)?;
    Ok(path)
}
