//! Adversarial, cycle, identity, structural and perceptual objectives.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::imaging::{ssim_index, SsimParams};
use crate::networks::FeatureExtractor;

/// Clamp applied to discriminator scores before taking logs.
pub const SCORE_EPS: f64 = 1e-7;
/// Guards the min-max normalisation of constant feature maps.
const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_gan: f64,
    pub w_cyc: f64,
    pub w_id: f64,
    pub w_ssim: f64,
    pub w_perc: f64,
    pub lambda_dssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_gan: 1.0,
            w_cyc: 10.0,
            w_id: 5.0,
            w_ssim: 1.0,
            w_perc: 1.0,
            lambda_dssim: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("w_gan", self.w_gan),
            ("w_cyc", self.w_cyc),
            ("w_id", self.w_id),
            ("w_ssim", self.w_ssim),
            ("w_perc", self.w_perc),
            ("lambda_dssim", self.lambda_dssim),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if all[..5].iter().all(|(_, v)| *v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    /// Weighted generator objective from individual term values.
    pub fn total_g(&self, t: &TermValues) -> f64 {
        self.w_gan * (t.gan_ab + t.gan_ba)
            + self.w_cyc * t.cyc
            + self.w_id * t.id
            + self.w_ssim * t.ssim
            + self.w_perc * t.perc
    }
}

/// Scalar values of every objective term for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub gan_ab: f64,
    pub gan_ba: f64,
    pub cyc: f64,
    pub id: f64,
    pub ssim: f64,
    pub perc: f64,
    pub dssim: f64,
    pub d_a: f64,
    pub d_b: f64,
}

/// Per-step decomposition of the objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_ab: f64,
    pub gan_ba: f64,
    pub cyc: f64,
    pub id: f64,
    pub ssim: f64,
    pub perc: f64,
    pub dssim: f64,
    pub total_g: f64,
    pub total_d_a: f64,
    pub total_d_b: f64,
}

/// Combines term values into a report, rejecting non-finite terms.
pub fn total_objectives(t: &TermValues, w: &LossWeights, step: u64) -> Result<LossReport> {
    let named = [
        ("gan_ab", t.gan_ab),
        ("gan_ba", t.gan_ba),
        ("cyc", t.cyc),
        ("id", t.id),
        ("ssim", t.ssim),
        ("perc", t.perc),
        ("dssim", t.dssim),
        ("total_d_a", t.d_a),
        ("total_d_b", t.d_b),
    ];
    if let Some((term, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            term: term.to_string(),
            step,
        });
    }
    let total_g = w.total_g(t);
    if !total_g.is_finite() {
        return Err(Error::NonFinite {
            term: "total_g".into(),
            step,
        });
    }
    Ok(LossReport {
        gan_ab: t.gan_ab,
        gan_ba: t.gan_ba,
        cyc: t.cyc,
        id: t.id,
        ssim: t.ssim,
        perc: t.perc,
        dssim: t.dssim,
        total_g,
        total_d_a: t.d_a,
        total_d_b: t.d_b,
    })
}

fn check_scores<T: Float>(scores: &Var<T>, what: &str) -> Result<()> {
    if let Some(v) = scores.value().iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(Error::Precondition(format!(
            "{what} discriminator score {v} lies outside [0, 1]"
        )));
    }
    Ok(())
}

fn same_shape<T: Float>(a: &Var<T>, b: &Var<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Generator-side (non-saturating) adversarial term `-mean(log D(fake))`.
pub fn generator_adversarial<T: Float>(fake: &Var<T>) -> Result<Var<T>> {
    check_scores(fake, "fake")?;
    Ok(fake.clamp(SCORE_EPS, 1.0 - SCORE_EPS).log().mean_all().neg())
}

/// Discriminator term `-mean(log D(real)) - mean(log(1 - D(fake)))`.
pub fn discriminator_adversarial<T: Float>(real: &Var<T>, fake: &Var<T>) -> Result<Var<T>> {
    check_scores(real, "real")?;
    check_scores(fake, "fake")?;
    let lr = real.clamp(SCORE_EPS, 1.0 - SCORE_EPS).log().mean_all();
    let lf = fake
        .clamp(SCORE_EPS, 1.0 - SCORE_EPS)
        .neg()
        .add_scalar(1.0)
        .log()
        .mean_all();
    Ok(lr.add(&lf).neg())
}

/// `(d_loss, g_loss)` for one discriminator.
pub fn adversarial_loss<T: Float>(real: &Var<T>, fake: &Var<T>) -> Result<(Var<T>, Var<T>)> {
    Ok((discriminator_adversarial(real, fake)?, generator_adversarial(fake)?))
}

fn mae<T: Float>(x: &Var<T>, y: &Var<T>) -> Var<T> {
    x.sub(y).abs().mean_all()
}

/// `mean|rec_a - a| + mean|rec_b - b|`.
pub fn cycle_loss<T: Float>(a: &Var<T>, rec_a: &Var<T>, b: &Var<T>, rec_b: &Var<T>) -> Result<Var<T>> {
    same_shape(a, rec_a, "cycle loss (A)")?;
    same_shape(b, rec_b, "cycle loss (B)")?;
    Ok(mae(rec_a, a).add(&mae(rec_b, b)))
}

/// `mean|G_AB(b) - b'| + mean|G_BA(a) - a'|` where the primed references
/// were resized to the generator output resolution by the caller.
pub fn identity_loss<T: Float>(
    g_ab_of_b: &Var<T>,
    b_resampled: &Var<T>,
    g_ba_of_a: &Var<T>,
    a_resampled: &Var<T>,
) -> Result<Var<T>> {
    same_shape(g_ab_of_b, b_resampled, "identity loss (B)")?;
    same_shape(g_ba_of_a, a_resampled, "identity loss (A)")?;
    Ok(mae(g_ab_of_b, b_resampled).add(&mae(g_ba_of_a, a_resampled)))
}

/// `1 - SSIM(x, y)` on (N, C, H, W) batches.
pub fn ssim_loss<T: Float>(x: &Var<T>, y: &Var<T>, p: &SsimParams) -> Result<Var<T>> {
    same_shape(x, y, "ssim loss")?;
    if x.ndim() != 4 {
        return Err(Error::Shape(format!("ssim loss expects 4-D batches, got {:?}", x.shape())));
    }
    p.validate()?;
    let (_, _, h, w) = x.dims4();
    p.check_fits(h, w)?;
    Ok(ssim_index(x, y, p).neg().add_scalar(1.0))
}

/// Rescales every (sample, channel) map to `[0, 1]`.
pub fn minmax_normalize<T: Float>(f: &Var<T>) -> Var<T> {
    let lo = f.min_hw();
    let hi = f.max_hw();
    f.sub(&lo).div(&hi.sub(&lo).add_scalar(NORM_EPS))
}

/// SSIM parameters adapted to a feature map: the window shrinks to the
/// largest odd size not exceeding the smaller spatial dimension.
pub fn feature_ssim_params(p: &SsimParams, h: usize, w: usize) -> SsimParams {
    let m = h.min(w);
    if p.window_size <= m {
        return *p;
    }
    let win = if m % 2 == 1 { m } else { m.saturating_sub(1).max(1) };
    p.with_window(win)
}

/// `1 - SSIM` between min-max normalised feature maps, averaged over channels.
pub fn dssim_features<T: Float>(fx: &Var<T>, fy: &Var<T>, p: &SsimParams) -> Result<Var<T>> {
    same_shape(fx, fy, "deep ssim")?;
    let (_, _, h, w) = fx.dims4();
    let q = feature_ssim_params(p, h, w);
    ssim_loss(&minmax_normalize(fx), &minmax_normalize(fy), &q)
}

/// Deep SSIM loss between two image batches under the extractor `fe`.
pub fn dssim_deep<T: Float>(
    x: &Var<T>,
    y: &Var<T>,
    fe: &FeatureExtractor<T>,
    p: &SsimParams,
) -> Result<Var<T>> {
    same_shape(x, y, "deep ssim")?;
    dssim_features(&fe.forward(x)?, &fe.forward(y)?, p)
}

/// Perceptual objective split into its parts.
#[derive(Debug, Clone)]
pub struct PerceptualTerms<T: Float> {
    /// Feature L1 distance summed over both directions.
    pub l1: Var<T>,
    /// Deep SSIM loss summed over both directions.
    pub dssim: Var<T>,
    /// `l1 + lambda * dssim`.
    pub total: Var<T>,
}

/// Perceptual loss between each domain batch and the batch translated into it
/// from the other domain: `real_a` vs `fake_a = G_BA(b)` and `real_b` vs
/// `fake_b = G_AB(a)`.
pub fn perceptual_loss<T: Float>(
    real_a: &Var<T>,
    fake_a: &Var<T>,
    real_b: &Var<T>,
    fake_b: &Var<T>,
    fe: &FeatureExtractor<T>,
    lambda: f64,
    p: &SsimParams,
) -> Result<PerceptualTerms<T>> {
    if real_a.shape()[0] != real_b.shape()[0] {
        return Err(Error::Shape(format!(
            "perceptual loss: batch sizes {} (A) and {} (B) differ",
            real_a.shape()[0],
            real_b.shape()[0]
        )));
    }
    same_shape(real_a, fake_a, "perceptual loss (A)")?;
    same_shape(real_b, fake_b, "perceptual loss (B)")?;
    let (fa, ffa) = (fe.forward(real_a)?.detach(), fe.forward(fake_a)?);
    let (fb, ffb) = (fe.forward(real_b)?.detach(), fe.forward(fake_b)?);
    let l1 = mae(&ffa, &fa).add(&mae(&ffb, &fb));
    let dssim = dssim_features(&fa, &ffa, p)?.add(&dssim_features(&fb, &ffb, p)?);
    let total = l1.add(&dssim.mul_scalar(lambda));
    Ok(PerceptualTerms { l1, dssim, total })
}
