mod common;

use common::{random_image, ssim_oracle, ssim_oracle_batch, uniform};
use ircal_core::autograd::{no_grad, Var};
use ircal_core::gradcheck::check_gradients;
use ircal_core::imaging::SsimParams;
use ircal_core::losses::{
    adversarial_loss, cycle_loss, discriminator_adversarial, dssim_deep, dssim_features,
    feature_ssim_params, generator_adversarial, identity_loss, perceptual_loss, ssim_loss,
    total_objectives, LossWeights, TermValues,
};
use ircal_core::networks::{BackboneKind, FeatureExtractor};
use ircal_core::Error;
use ndarray::{Array3, ArrayD, Axis, IxDyn};
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn c(a: ArrayD<f64>) -> Var<f64> {
    Var::constant(a)
}

fn adversarial_oracle(real: &ArrayD<f64>, fake: &ArrayD<f64>) -> (f64, f64) {
    let eps = 1e-7;
    let cl = |v: f64| v.clamp(eps, 1.0 - eps);
    let (mut lr, mut lf, mut lg) = (0.0, 0.0, 0.0);
    for &r in real.iter() {
        lr += cl(r).ln();
    }
    for &f in fake.iter() {
        lf += (1.0 - cl(f)).ln();
        lg += cl(f).ln();
    }
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    (-lr / nr - lf / nf, -lg / nf)
}

fn mae_oracle(x: &ArrayD<f64>, y: &ArrayD<f64>) -> f64 {
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        s += (a - b).abs();
    }
    s / x.len() as f64
}

#[test]
fn adversarial_at_half_scores() {
    let half = ArrayD::from_elem(IxDyn(&[2, 1, 3, 3]), 0.5);
    let (d, g) = adversarial_loss(&c(half.clone()), &c(half)).unwrap();
    assert!((d.item() - 2.0 * LN2).abs() < 1e-12);
    assert!((g.item() - LN2).abs() < 1e-12);
}

#[test]
fn adversarial_perfect_discriminator_limit() {
    let real = ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 1.0);
    let fake = ArrayD::zeros(IxDyn(&[1, 1, 2, 2]));
    let (d, _) = adversarial_loss(&c(real), &c(fake)).unwrap();
    assert!(d.item() < 1e-6);
}

#[test]
fn adversarial_matches_loop_oracle() {
    for seed in 0..5 {
        let real = uniform(seed, &[3, 1, 4, 5], 0.0, 1.0);
        let fake = uniform(seed + 50, &[3, 1, 4, 5], 0.0, 1.0);
        let (d, g) = adversarial_loss(&c(real.clone()), &c(fake.clone())).unwrap();
        let (od, og) = adversarial_oracle(&real, &fake);
        assert!((d.item() - od).abs() < 1e-6 && (g.item() - og).abs() < 1e-6);
    }
}

#[test]
fn adversarial_rejects_scores_outside_unit_interval() {
    let ok = ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 0.5);
    let bad = ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 1.5);
    assert!(matches!(adversarial_loss(&c(ok.clone()), &c(bad.clone())), Err(Error::Precondition(_))));
    assert!(matches!(discriminator_adversarial(&c(bad), &c(ok)), Err(Error::Precondition(_))));
    let nan = ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), f64::NAN);
    assert!(generator_adversarial(&c(nan)).is_err());
}

#[test]
fn cycle_loss_cases() {
    let a = uniform(1, &[2, 3, 8, 8], 0.0, 1.0);
    let b = uniform(2, &[2, 3, 16, 16], 0.0, 1.0);
    let zero = cycle_loss(&c(a.clone()), &c(a.clone()), &c(b.clone()), &c(b.clone())).unwrap();
    assert_eq!(zero.item(), 0.0);
    let shifted = cycle_loss(&c(a.clone()), &c(&a + 0.1), &c(b.clone()), &c(b.clone())).unwrap();
    assert!((shifted.item() - 0.1).abs() < 1e-12);
    let ra = uniform(3, &[2, 3, 8, 8], 0.0, 1.0);
    let rb = uniform(4, &[2, 3, 16, 16], 0.0, 1.0);
    let got = cycle_loss(&c(a.clone()), &c(ra.clone()), &c(b.clone()), &c(rb.clone())).unwrap();
    assert!((got.item() - (mae_oracle(&a, &ra) + mae_oracle(&b, &rb))).abs() < 1e-12);
    assert!(matches!(cycle_loss(&c(a.clone()), &c(b.clone()), &c(b), &c(a)), Err(Error::Shape(_))));
}

#[test]
fn identity_loss_cases() {
    let gb = uniform(5, &[2, 3, 16, 16], 0.0, 1.0);
    let ga = uniform(6, &[2, 3, 8, 8], 0.0, 1.0);
    assert_eq!(identity_loss(&c(gb.clone()), &c(gb.clone()), &c(ga.clone()), &c(ga.clone())).unwrap().item(), 0.0);
    let off = identity_loss(&c(&gb + 0.05), &c(gb.clone()), &c(ga.clone()), &c(ga.clone())).unwrap();
    assert!((off.item() - 0.05).abs() < 1e-12);
    let rb = uniform(7, &[2, 3, 16, 16], 0.0, 1.0);
    let ra = uniform(8, &[2, 3, 8, 8], 0.0, 1.0);
    let got = identity_loss(&c(gb.clone()), &c(rb.clone()), &c(ga.clone()), &c(ra.clone())).unwrap();
    assert!((got.item() - (mae_oracle(&gb, &rb) + mae_oracle(&ga, &ra))).abs() < 1e-12);
    assert!(identity_loss(&c(gb.clone()), &c(ra), &c(ga), &c(rb)).is_err());
}

#[test]
fn ssim_loss_cases() {
    let p = SsimParams::default();
    let x = random_image(1, 3, 16, 16).to_batch::<f64>();
    assert_eq!(ssim_loss(&c(x.clone()), &c(x.clone()), &p).unwrap().item(), 0.0);

    let zeros = ArrayD::zeros(IxDyn(&[1, 1, 16, 16]));
    let ones = ArrayD::ones(IxDyn(&[1, 1, 16, 16]));
    let l = ssim_loss(&c(zeros), &c(ones), &p).unwrap().item();
    assert!((l - (1.0 - p.c1() / (1.0 + p.c1()))).abs() < 1e-12);
    assert!(l > 0.9998);

    let y = random_image(2, 3, 16, 16);
    let xi = random_image(1, 3, 16, 16);
    let got = ssim_loss(&c(x), &c(y.to_batch()), &p).unwrap().item();
    let want = 1.0 - ssim_oracle(xi.data(), y.data(), 11, 1.5, p.c1(), p.c2());
    assert!((got - want).abs() < 1e-9);

    let small = ArrayD::zeros(IxDyn(&[1, 1, 8, 8]));
    assert!(matches!(ssim_loss(&c(small.clone()), &c(small), &p), Err(Error::Shape(_))));
}

fn minmax_oracle(f: &ArrayD<f64>) -> ArrayD<f64> {
    let mut out = f.clone();
    let (n, ch) = (f.shape()[0], f.shape()[1]);
    for i in 0..n {
        for j in 0..ch {
            let map = f.index_axis(Axis(0), i).index_axis(Axis(0), j).to_owned();
            let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut dst = out.index_axis_mut(Axis(0), i);
            let mut dst = dst.index_axis_mut(Axis(0), j);
            dst.zip_mut_with(&map, |d, &v| *d = (v - lo) / (hi - lo + 1e-6));
        }
    }
    out
}

#[test]
fn feature_window_falls_back_to_largest_odd_size() {
    let p = SsimParams::default();
    assert_eq!(feature_ssim_params(&p, 8, 10).window_size, 7);
    assert_eq!(feature_ssim_params(&p, 5, 9).window_size, 5);
    assert_eq!(feature_ssim_params(&p, 32, 32).window_size, 11);
}

#[test]
fn dssim_deep_matches_composition_oracle() {
    let fe = FeatureExtractor::<f64>::seeded(BackboneKind::ResNet18, "layer2", 3).unwrap();
    let p = SsimParams::default();
    let x = random_image(10, 3, 64, 64);
    let y = random_image(11, 3, 64, 64);
    let xb = x.to_batch::<f64>();
    let yb = y.to_batch::<f64>();
    assert_eq!(dssim_deep(&c(xb.clone()), &c(xb.clone()), &fe, &p).unwrap().item(), 0.0);

    let got = dssim_deep(&c(xb), &c(yb), &fe, &p).unwrap().item();
    assert!((0.0..=2.0).contains(&got));
    // features are 8x8, so the window shrinks to 7
    let fx = fe.extract(&x).unwrap().insert_axis(Axis(0)).into_dyn();
    let fy = fe.extract(&y).unwrap().insert_axis(Axis(0)).into_dyn();
    let want = 1.0 - ssim_oracle_batch(&minmax_oracle(&fx), &minmax_oracle(&fy), 7, p.c1(), p.c2());
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn perceptual_loss_composition_and_degenerate_cases() {
    let fe = FeatureExtractor::<f64>::seeded(BackboneKind::ResNet18, "layer2", 5).unwrap();
    let p = SsimParams::default();
    let a = ndarray::concatenate(Axis(0), &[random_image(1, 3, 32, 32).to_batch::<f64>().view(), random_image(2, 3, 32, 32).to_batch::<f64>().view()]).unwrap();
    let b = ndarray::concatenate(Axis(0), &[random_image(3, 3, 64, 64).to_batch::<f64>().view(), random_image(4, 3, 64, 64).to_batch::<f64>().view()]).unwrap();
    let fa = uniform(5, &[2, 3, 32, 32], 0.0, 1.0);
    let fb = uniform(6, &[2, 3, 64, 64], 0.0, 1.0);

    let same = perceptual_loss(&c(a.clone()), &c(a.clone()), &c(b.clone()), &c(b.clone()), &fe, 1.0, &p).unwrap();
    assert_eq!(same.total.item(), 0.0);

    let terms = perceptual_loss(&c(a.clone()), &c(fa.clone()), &c(b.clone()), &c(fb.clone()), &fe, 0.7, &p).unwrap();
    let feats = |x: &ArrayD<f64>| no_grad(|| fe.forward(&c(x.clone())).unwrap().value().clone());
    let (ha, hfa, hb, hfb) = (feats(&a), feats(&fa), feats(&b), feats(&fb));
    let l1 = mae_oracle(&ha, &hfa) + mae_oracle(&hb, &hfb);
    // A features are 4x4 (window 3), B features 8x8 (window 7)
    let ds = (1.0 - ssim_oracle_batch(&minmax_oracle(&ha), &minmax_oracle(&hfa), 3, p.c1(), p.c2()))
        + (1.0 - ssim_oracle_batch(&minmax_oracle(&hb), &minmax_oracle(&hfb), 7, p.c1(), p.c2()));
    assert!((terms.l1.item() - l1).abs() < 1e-9);
    assert!((terms.dssim.item() - ds).abs() < 1e-9);
    assert!((terms.total.item() - (l1 + 0.7 * ds)).abs() < 1e-9);

    let pure = perceptual_loss(&c(a.clone()), &c(fa), &c(b.clone()), &c(fb), &fe, 0.0, &p).unwrap();
    assert_eq!(pure.total.item(), pure.l1.item());

    let b1 = b.slice_axis(Axis(0), ndarray::Slice::from(0..1)).to_owned();
    assert!(perceptual_loss(&c(a.clone()), &c(a), &c(b1.clone()), &c(b1), &fe, 1.0, &p).is_err());
}

#[test]
fn total_objectives_cases() {
    let only_cyc = LossWeights { w_gan: 0.0, w_cyc: 1.0, w_id: 0.0, w_ssim: 0.0, w_perc: 0.0, lambda_dssim: 0.0 };
    let t = TermValues { cyc: 0.3, gan_ab: 0.9, perc: 2.0, ..Default::default() };
    assert!((total_objectives(&t, &only_cyc, 0).unwrap().total_g - 0.3).abs() < 1e-15);

    let zero = total_objectives(&TermValues::default(), &LossWeights::default(), 0).unwrap();
    assert_eq!((zero.total_g, zero.total_d_a, zero.total_d_b), (0.0, 0.0, 0.0));

    let w = LossWeights { w_gan: 0.5, w_cyc: 3.0, w_id: 2.0, w_ssim: 0.25, w_perc: 4.0, lambda_dssim: 1.0 };
    let t = TermValues { gan_ab: 0.7, gan_ba: 1.1, cyc: 0.2, id: 0.05, ssim: 0.4, perc: 0.3, dssim: 0.1, d_a: 1.2, d_b: 1.3 };
    let r = total_objectives(&t, &w, 0).unwrap();
    // 0.5*1.8 + 0.6 + 0.1 + 0.1 + 1.2
    assert!((r.total_g - 2.9).abs() < 1e-12);
    assert_eq!((r.total_d_a, r.total_d_b), (1.2, 1.3));

    let bad = TermValues { ssim: f64::NAN, ..t };
    match total_objectives(&bad, &w, 17) {
        Err(Error::NonFinite { term, step }) => assert_eq!((term.as_str(), step), ("ssim", 17)),
        other => panic!("expected NaN guard, got {other:?}"),
    }
}

#[test]
fn loss_weights_validation() {
    assert!(LossWeights::default().validate().is_ok());
    assert!(LossWeights { w_cyc: -1.0, ..Default::default() }.validate().is_err());
    let zero = LossWeights { w_gan: 0.0, w_cyc: 0.0, w_id: 0.0, w_ssim: 0.0, w_perc: 0.0, lambda_dssim: 1.0 };
    assert!(zero.validate().is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let p = SsimParams::default();
    for seed in 0..5 {
        let x = uniform(seed, &[1, 2, 12, 12], 0.0, 1.0);
        let y = uniform(seed + 10, &[1, 2, 12, 12], 0.0, 1.0);
        let e = check_gradients(|v| ssim_loss(&v[0], &v[1], &p).unwrap(), &[x.clone(), y.clone()], 1e-4);
        assert!(e < 1e-3, "ssim_loss {e}");

        let b = uniform(seed + 20, &[1, 2, 6, 6], 0.0, 1.0);
        let rb = uniform(seed + 30, &[1, 2, 6, 6], 0.0, 1.0);
        let e = check_gradients(|v| cycle_loss(&v[0], &v[1], &v[2], &v[3]).unwrap(), &[x.clone(), y.clone(), b.clone(), rb.clone()], 1e-4);
        assert!(e < 1e-3, "cycle_loss {e}");
        let e = check_gradients(|v| identity_loss(&v[0], &v[1], &v[2], &v[3]).unwrap(), &[x, y, b, rb], 1e-4);
        assert!(e < 1e-3, "identity_loss {e}");

        let fake = uniform(seed + 40, &[2, 1, 3, 3], 0.05, 0.95);
        let real = uniform(seed + 50, &[2, 1, 3, 3], 0.05, 0.95);
        let e = check_gradients(|v| generator_adversarial(&v[0]).unwrap(), &[fake.clone()], 1e-4);
        assert!(e < 1e-3, "generator adversarial {e}");
        let e = check_gradients(|v| discriminator_adversarial(&v[0], &v[1]).unwrap(), &[real, fake], 1e-4);
        assert!(e < 1e-3, "discriminator adversarial {e}");

        let f1 = uniform(seed + 60, &[1, 3, 6, 6], -1.0, 2.0);
        let f2 = uniform(seed + 70, &[1, 3, 6, 6], -1.0, 2.0);
        let e = check_gradients(|v| dssim_features(&v[0], &v[1], &p).unwrap(), &[f1, f2], 1e-4);
        assert!(e < 1e-3, "dssim {e}");
    }
}

fn permute(x: &ArrayD<f64>, order: &[usize]) -> ArrayD<f64> {
    let views: Vec<_> = order.iter().map(|&i| x.index_axis(Axis(0), i).insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn losses_are_nonnegative_and_batch_permutation_invariant(seed in any::<u64>(), rot in 1usize..3) {
        let p = SsimParams::default();
        let x = uniform(seed, &[3, 1, 12, 12], 0.0, 1.0);
        let y = uniform(seed ^ 1, &[3, 1, 12, 12], 0.0, 1.0);
        let s = uniform(seed ^ 2, &[3, 1, 2, 2], 0.0, 1.0);
        let order: Vec<usize> = (0..3).map(|i| (i + rot) % 3).collect();
        let (px, py, ps) = (permute(&x, &order), permute(&y, &order), permute(&s, &order));

        let l = ssim_loss(&c(x.clone()), &c(y.clone()), &p).unwrap().item();
        let lp = ssim_loss(&c(px.clone()), &c(py.clone()), &p).unwrap().item();
        prop_assert!(l >= 0.0 && (l - lp).abs() < 1e-12);

        let cy = cycle_loss(&c(x.clone()), &c(y.clone()), &c(x.clone()), &c(y.clone())).unwrap().item();
        let cyp = cycle_loss(&c(px.clone()), &c(py.clone()), &c(px), &c(py)).unwrap().item();
        prop_assert!(cy >= 0.0 && (cy - cyp).abs() < 1e-12);

        let (d, g) = adversarial_loss(&c(s.clone()), &c(y.clone())).unwrap();
        let (dp, gp) = adversarial_loss(&c(ps), &c(permute(&y, &order))).unwrap();
        prop_assert!(d.item() >= 0.0 && g.item() >= 0.0);
        prop_assert!((d.item() - dp.item()).abs() < 1e-12 && (g.item() - gp.item()).abs() < 1e-12);
    }

    #[test]
    fn total_g_is_linear_in_each_weight(seed in any::<u64>(), k in 0usize..5, scale in 0.0f64..4.0) {
        let v = uniform(seed, &[9], 0.0, 2.0);
        let t = TermValues { gan_ab: v[0], gan_ba: v[1], cyc: v[2], id: v[3], ssim: v[4], perc: v[5], dssim: v[6], d_a: v[7], d_b: v[8] };
        let base = LossWeights::default();
        let set = |w: &mut LossWeights, val: f64| match k {
            0 => w.w_gan = val,
            1 => w.w_cyc = val,
            2 => w.w_id = val,
            3 => w.w_ssim = val,
            _ => w.w_perc = val,
        };
        let mut w0 = base; set(&mut w0, 0.0);
        let mut w1 = base; set(&mut w1, 1.0);
        let mut ws = base; set(&mut ws, scale);
        let (t0, t1, ts) = (w0.total_g(&t), w1.total_g(&t), ws.total_g(&t));
        prop_assert!((ts - (t0 + scale * (t1 - t0))).abs() < 1e-9);
    }
}

#[test]
fn ssim_oracle_agrees_on_multichannel_feature_shapes() {
    // sanity check of the helper against the single-image oracle
    let x = Array3::from_shape_fn((2, 9, 9), |(a, b, c)| ((a + 2 * b + 3 * c) % 7) as f64 / 7.0);
    let y = Array3::from_shape_fn((2, 9, 9), |(a, b, c)| ((3 * a + b + c) % 5) as f64 / 5.0);
    let p = SsimParams::default();
    let single = ssim_oracle(&x, &y, 7, 1.5, p.c1(), p.c2());
    let batch = ssim_oracle_batch(&x.clone().insert_axis(Axis(0)).into_dyn(), &y.insert_axis(Axis(0)).into_dyn(), 7, p.c1(), p.c2());
    assert_eq!(single, batch);
}
