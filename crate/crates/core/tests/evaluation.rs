use std::path::Path;

use ircal_core::dataset::{load_manifest, write_synthetic_dataset, DatasetManifest, Domain, Split, SynthOptions};
use ircal_core::evaluation::{
    evaluate, evaluate_pairs, evaluation_pairs, grid_dims, qualitative_grid, EvalReport, EvalSample,
    LoadedCheckpoint, Translator, GRID_COLUMNS,
};
use ircal_core::networks::{BackboneKind, Direction, FeatureExtractor, Generator, GeneratorConfig};
use ircal_core::training::checkpoint::write_self_test;
use ircal_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const RES_A: (usize, usize) = (16, 16);
const RES_B: (usize, usize) = (32, 32);

fn fixture(dir: &Path, n: usize) -> DatasetManifest {
    let opts = SynthOptions {
        n_pairs: n,
        seed: 11,
        resolution: RES_B,
        n_blobs: 2,
        val_fraction: 0.0,
        test_fraction: 0.5,
    };
    load_manifest(&write_synthetic_dataset(dir, &opts).unwrap()).unwrap()
}

fn small_vgg() -> FeatureExtractor<f32> {
    FeatureExtractor::seeded(BackboneKind::Vgg19, "relu2_2", 0).unwrap()
}

fn random_generator() -> Translator {
    let cfg = GeneratorConfig {
        base_channels: 4,
        ..GeneratorConfig::new(Direction::AB)
    };
    Translator::Network(Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap())
}

#[test]
fn self_test_checkpoint_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(&dir.path().join("data"), 6);
    let ck_dir = dir.path().join("selftest");
    write_self_test(&ck_dir, RES_A, RES_B).unwrap();
    let ck = LoadedCheckpoint::load(&ck_dir).unwrap();
    assert!(matches!(ck.translator, Translator::ResizeOfReference));
    let r = evaluate(&ck, &m, Split::Test).unwrap();
    assert_eq!(r.n, 3);
    assert_eq!(r.avg_ssim, 1.0);
    assert_eq!(r.avg_l_phi, 0.0);
    assert_eq!(r.summary_line(), "avg_ssim=1.0000 avg_l_phi=0.0000");
}

#[test]
fn aggregates_are_means_of_samples() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path(), 6);
    let (pairs, skipped) = evaluation_pairs(&m, Split::Test, RES_A, RES_B).unwrap();
    assert_eq!((pairs.len(), skipped), (3, 0));
    let r = evaluate_pairs(&Translator::Bilinear, &small_vgg(), &pairs, skipped).unwrap();
    let ms = r.samples.iter().map(|s| s.ssim).sum::<f64>() / 3.0;
    let ml = r.samples.iter().map(|s| s.l_phi).sum::<f64>() / 3.0;
    assert!((r.avg_ssim - ms).abs() < 1e-9);
    assert!((r.avg_l_phi - ml).abs() < 1e-9);
    assert!(r.avg_ssim < 1.0 && r.avg_l_phi > 0.0);
    for (s, p) in r.samples.iter().zip(&pairs) {
        assert_eq!(s.id, p.input.id);
        assert_eq!(p.input.domain, Domain::A);
        assert_eq!(p.reference.ir.dims(), (3, 32, 32));
    }
}

#[test]
fn metrics_do_not_depend_on_sample_order() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path(), 6);
    let (mut pairs, _) = evaluation_pairs(&m, Split::Test, RES_A, RES_B).unwrap();
    let fe = small_vgg();
    let t = random_generator();
    let r1 = evaluate_pairs(&t, &fe, &pairs, 0).unwrap();
    pairs.reverse();
    let r2 = evaluate_pairs(&t, &fe, &pairs, 0).unwrap();
    assert!((r1.avg_ssim - r2.avg_ssim).abs() < 1e-12);
    assert!((r1.avg_l_phi - r2.avg_l_phi).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregates_are_permutation_invariant(
        vals in prop::collection::vec((0.0f64..1.0, 0.0f64..5.0), 1..20),
        seed in any::<u64>(),
    ) {
        let samples: Vec<EvalSample> = vals
            .iter()
            .enumerate()
            .map(|(i, &(ssim, l_phi))| EvalSample { id: format!("s{i}"), ssim, l_phi })
            .collect();
        let mut shuffled = samples.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = EvalReport::from_samples(samples, 0).unwrap();
        let b = EvalReport::from_samples(shuffled, 0).unwrap();
        prop_assert!((a.avg_ssim - b.avg_ssim).abs() < 1e-12);
        prop_assert!((a.avg_l_phi - b.avg_l_phi).abs() < 1e-12);
        prop_assert_eq!(a.n, vals.len());
    }
}

#[test]
fn missing_references_are_counted_and_all_missing_fails() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(&dir.path().join("data"), 6);
    let dropped = "pair_0005_b";
    let rows: Vec<_> = m.rows().iter().filter(|r| r.sample_id != dropped).cloned().collect();
    let m2 = DatasetManifest::new(rows).unwrap();
    let ck_dir = dir.path().join("selftest");
    write_self_test(&ck_dir, RES_A, RES_B).unwrap();
    let ck = LoadedCheckpoint::load(&ck_dir).unwrap();
    let r = evaluate(&ck, &m2, Split::Test).unwrap();
    assert_eq!((r.n, r.skipped), (2, 1));

    let only_a: Vec<_> = m.rows().iter().filter(|r| r.domain == Domain::A).cloned().collect();
    let err = evaluate(&ck, &DatasetManifest::new(only_a).unwrap(), Split::Test).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset(_)), "{err}");
}

#[test]
fn report_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let r = EvalReport::from_samples(
        vec![
            EvalSample { id: "a".into(), ssim: 0.5, l_phi: 0.25 },
            EvalSample { id: "b".into(), ssim: 0.7, l_phi: 0.75 },
        ],
        1,
    )
    .unwrap();
    r.write(dir.path(), Split::Test).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(json["n"], 2);
    assert_eq!(json["skipped"], 1);
    assert!((json["avg_ssim"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert_eq!(json["avg_l_phi"], 0.5);
    let csv = std::fs::read_to_string(dir.path().join("eval_samples.csv")).unwrap();
    assert_eq!(csv, "id,ssim,l_phi\na,0.5,0.25\nb,0.7,0.75\n");
}

#[test]
fn empty_report_is_rejected() {
    assert!(EvalReport::from_samples(vec![], 0).is_err());
}

fn png_text(path: &Path) -> Vec<(String, String)> {
    let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path).unwrap()));
    let reader = dec.read_info().unwrap();
    reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect()
}

#[test]
fn grid_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(&dir.path().join("data"), 8);
    let (pairs, _) = evaluation_pairs(&m, Split::Test, RES_A, RES_B).unwrap();
    assert_eq!(pairs.len(), 4);
    let t = random_generator();
    for rows in [4usize, 1] {
        let path = dir.path().join(format!("grid{rows}.png"));
        qualitative_grid(&t, &pairs[..rows], &path).unwrap();
        let img = image::open(&path).unwrap();
        let (h, w) = grid_dims(rows, RES_B);
        assert_eq!((img.height() as usize, img.width() as usize), (h, w));
        assert_eq!(img.color(), image::ColorType::Rgb8);
        assert_eq!(png_text(&path), vec![("columns".to_string(), GRID_COLUMNS.join(","))]);
    }
    let again = dir.path().join("again.png");
    qualitative_grid(&t, &pairs, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(dir.path().join("grid4.png")).unwrap());
}

#[test]
fn grid_cells_hold_the_expected_images() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(&dir.path().join("data"), 2);
    let (pairs, _) = evaluation_pairs(&m, Split::Test, RES_A, RES_B).unwrap();
    let path = dir.path().join("g.png");
    qualitative_grid(&Translator::ResizeOfReference, &pairs, &path).unwrap();
    let img = image::open(&path).unwrap().to_rgb8();
    let (h, w) = RES_B;
    let cell = |col: usize, y: usize, x: usize| img.get_pixel((2 + col * (w + 2) + x) as u32, (2 + y) as u32).0;
    let reference = pairs[0].reference.ir.data();
    for (y, x) in [(0, 0), (5, 17), (h - 1, w - 1)] {
        assert_eq!(cell(2, y, x), cell(3, y, x));
        let expect = (reference[[0, y, x]] * 255.0).round() as u8;
        assert_eq!(cell(3, y, x)[0], expect);
    }
    assert_eq!(img.get_pixel(0, 0).0, [255, 255, 255]);
}

#[test]
fn grid_rejects_empty_input_and_bad_paths() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(&dir.path().join("data"), 2);
    let (pairs, _) = evaluation_pairs(&m, Split::Test, RES_A, RES_B).unwrap();
    assert!(qualitative_grid(&Translator::Bilinear, &[], &dir.path().join("x.png")).is_err());
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let err = qualitative_grid(&Translator::Bilinear, &pairs, &blocker.join("g.png")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn unloadable_checkpoints_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(LoadedCheckpoint::load(dir.path()).is_err());
    std::fs::write(dir.path().join("meta.json"), "{}").unwrap();
    assert!(matches!(LoadedCheckpoint::load(dir.path()), Err(Error::Checkpoint(_))));
}
