mod common;

use std::path::{Path, PathBuf};

use common::random_image;
use image::{ImageBuffer, Luma, Rgb};
use ircal_core::dataset::{
    batches, epoch_order, load_image, load_manifest, load_sample, make_synthetic_pair, palette,
    save_png, synthetic_split, write_synthetic_dataset, BitDepth, DatasetManifest, Domain,
    ManifestRow, Split, SynthOptions,
};
use ircal_core::imaging::{resize, ssim_map, ImageTensor, SsimParams};
use ircal_core::Error;
use ndarray::Array2;
use proptest::prelude::*;

fn write_rgb8(path: &Path, w: u32, h: u32, v: u8) {
    ImageBuffer::from_fn(w, h, |_, _| Rgb([v, v, v])).save(path).unwrap();
}

fn manifest_file(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("manifest.csv");
    std::fs::write(&p, format!("sample_id,domain,ir_path,rgb_path,split\n{body}")).unwrap();
    p
}

#[test]
fn well_formed_manifest_loads_in_order() {
    let dir = tempfile::tempdir().unwrap();
    write_rgb8(&dir.path().join("a.png"), 4, 4, 10);
    write_rgb8(&dir.path().join("b.png"), 8, 8, 20);
    let p = manifest_file(dir.path(), "s1,A,a.png,,train\ns2,B,b.png,a.png,test\n");
    let m = load_manifest(&p).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m.rows()[0].sample_id, "s1");
    assert_eq!(m.rows()[0].rgb_path, None);
    assert_eq!(m.rows()[1].domain, Domain::B);
    assert_eq!(m.rows()[1].split, Split::Test);
    assert_eq!(m.rows()[1].ir_path, dir.path().join("b.png"));
}

#[test]
fn manifest_errors_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    write_rgb8(&dir.path().join("a.png"), 4, 4, 10);

    let p = manifest_file(dir.path(), "s1,A,a.png,,train\ns1,B,a.png,,train\n");
    match load_manifest(&p) {
        Err(Error::DuplicateId { id, row }) => assert_eq!((id.as_str(), row), ("s1", 2)),
        other => panic!("{other:?}"),
    }

    let p = manifest_file(dir.path(), "s1,A,a.png,,train\ns2,A,missing.png,,train\n");
    match load_manifest(&p) {
        Err(Error::DanglingPath { row, .. }) => assert_eq!(row, 2),
        other => panic!("{other:?}"),
    }

    let p = manifest_file(dir.path(), "s1,C,a.png,,train\n");
    assert!(matches!(load_manifest(&p), Err(Error::Manifest { row: 1, .. })));
    let p = manifest_file(dir.path(), "s1,A,a.png,train\n");
    assert!(matches!(load_manifest(&p), Err(Error::Manifest { row: 1, .. })));

    let p = dir.path().join("bad_header.csv");
    std::fs::write(&p, "id,domain,ir,rgb,split\n").unwrap();
    assert!(matches!(load_manifest(&p), Err(Error::Manifest { row: 0, .. })));
    assert!(matches!(load_manifest(&dir.path().join("nope.csv")), Err(Error::Io { .. })));
}

#[test]
fn decoding_normalises_by_bit_depth() {
    let dir = tempfile::tempdir().unwrap();
    let p8 = dir.path().join("white.png");
    write_rgb8(&p8, 3, 2, 255);
    let img = load_image(&p8).unwrap();
    assert_eq!(img.dims(), (3, 2, 3));
    assert!(img.data().iter().all(|&v| v == 1.0));

    let p16 = dir.path().join("black16.png");
    ImageBuffer::<Luma<u16>, _>::from_fn(5, 4, |x, _| Luma([if x == 0 { 0 } else { 65535 }]))
        .save(&p16)
        .unwrap();
    let img = load_image(&p16).unwrap();
    assert_eq!(img.dims(), (3, 4, 5));
    assert_eq!(img.data()[[2, 1, 0]], 0.0);
    assert_eq!(img.data()[[1, 3, 4]], 1.0);

    let tiff = dir.path().join("g.tiff");
    ImageBuffer::<Luma<u16>, _>::from_fn(2, 2, |_, _| Luma([32768])).save(&tiff).unwrap();
    assert!((load_image(&tiff).unwrap().data()[[0, 0, 0]] - 32768.0 / 65535.0).abs() < 1e-12);

    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    assert!(matches!(load_image(&junk), Err(Error::Decode { .. })));
}

#[test]
fn missing_rgb_yields_zero_condition_at_target_size() {
    let dir = tempfile::tempdir().unwrap();
    write_rgb8(&dir.path().join("a.png"), 8, 6, 128);
    let row = ManifestRow {
        sample_id: "x".into(),
        domain: Domain::A,
        ir_path: dir.path().join("a.png"),
        rgb_path: None,
        split: Split::Train,
    };
    let s = load_sample(&row, (12, 16)).unwrap();
    assert_eq!(s.ir.dims(), (3, 12, 16));
    assert_eq!(s.rgb, ImageTensor::zeros(3, 12, 16));
    assert!(s.rgb_is_zero());
}

#[test]
fn png_round_trip_is_exact_at_16_bits() {
    let dir = tempfile::tempdir().unwrap();
    let img = ImageTensor::new(random_image(3, 3, 9, 7).data().mapv(|v| (v * 65535.0).round() / 65535.0)).unwrap();
    let p = dir.path().join("x.png");
    save_png(&img, &p, BitDepth::Sixteen).unwrap();
    assert_eq!(load_image(&p).unwrap(), img);
}

fn ten_sample_manifest(dir: &Path) -> DatasetManifest {
    write_rgb8(&dir.join("img.png"), 4, 4, 50);
    let rows = (0..10)
        .map(|i| ManifestRow {
            sample_id: format!("s{i}"),
            domain: Domain::A,
            ir_path: dir.join("img.png"),
            rgb_path: None,
            split: Split::Train,
        })
        .collect();
    DatasetManifest::new(rows).unwrap()
}

#[test]
fn batching_sizes_order_and_empty_selection() {
    let dir = tempfile::tempdir().unwrap();
    let m = ten_sample_manifest(dir.path());
    let sizes: Vec<usize> = batches(&m, Domain::A, Split::Train, 4, 1, (4, 4))
        .unwrap()
        .map(|b| b.unwrap().len())
        .collect();
    assert_eq!(sizes, vec![4, 4, 2]);

    let o1 = batches(&m, Domain::A, Split::Train, 4, 9, (4, 4)).unwrap().order_ids().join(",");
    let o2 = batches(&m, Domain::A, Split::Train, 4, 9, (4, 4)).unwrap().order_ids().join(",");
    assert_eq!(o1, o2);
    assert_ne!(o1, batches(&m, Domain::A, Split::Train, 4, 10, (4, 4)).unwrap().order_ids().join(","));

    match batches(&m, Domain::B, Split::Train, 4, 1, (4, 4)) {
        Err(e @ Error::EmptyDataset(_)) => assert!(e.to_string().starts_with("empty-dataset")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn batch_arrays_have_batch_shape() {
    let dir = tempfile::tempdir().unwrap();
    let m = ten_sample_manifest(dir.path());
    let b = batches(&m, Domain::A, Split::Train, 3, 0, (8, 12)).unwrap().next().unwrap().unwrap();
    assert_eq!(b.ir::<f32>().unwrap().shape(), &[3, 3, 8, 12]);
    assert_eq!(b.rgb::<f32>().unwrap().shape(), &[3, 3, 8, 12]);
}

#[test]
fn synthetic_pairs_are_deterministic_and_validated() {
    let p1 = make_synthetic_pair(5, (32, 48), 2).unwrap();
    let p2 = make_synthetic_pair(5, (32, 48), 2).unwrap();
    assert_eq!(p1, p2);
    assert_ne!(p1.b.ir, make_synthetic_pair(6, (32, 48), 2).unwrap().b.ir);
    assert_eq!(p1.a.ir.dims(), (3, 16, 24));
    assert_eq!(p1.b.ir.dims(), (3, 32, 48));
    assert_eq!(p1.a.rgb.dims(), (3, 16, 24));
    assert!(matches!(make_synthetic_pair(5, (32, 32), 0), Err(Error::Precondition(_))));
    assert!(matches!(make_synthetic_pair(5, (8, 8), 1), Err(Error::Precondition(_))));
}

#[test]
fn synthetic_degradation_is_real() {
    let pair = make_synthetic_pair(7, (64, 64), 3).unwrap();
    let up = resize(&pair.a.ir, 2.0).unwrap();
    let s = ssim_map(&up, &pair.b.ir, &SsimParams::default()).unwrap();
    assert!(s < 0.95, "ssim {s}");
}

fn luminance(img: &ImageTensor) -> Array2<f64> {
    let (_, h, w) = img.dims();
    let d = img.data();
    Array2::from_shape_fn((h, w), |(y, x)| d[[0, y, x]] + d[[1, y, x]] + d[[2, y, x]])
}

/// Integer shift of `moving` that best matches `fixed` by normalised cross-correlation.
fn best_shift(fixed: &Array2<f64>, moving: &Array2<f64>, radius: isize) -> (isize, isize) {
    let (h, w) = fixed.dim();
    let m = radius as usize;
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for y in m..h - m {
                for x in m..w - m {
                    a.push(fixed[[y, x]]);
                    b.push(moving[[(y as isize + dy) as usize, (x as isize + dx) as usize]]);
                }
            }
            let (ma, mb) = (a.iter().sum::<f64>() / a.len() as f64, b.iter().sum::<f64>() / b.len() as f64);
            let cov: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
            let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
            let ncc = cov / (va * vb).sqrt();
            if ncc > best.0 {
                best = (ncc, (dy, dx));
            }
        }
    }
    best.1
}

#[test]
fn synthetic_pairs_are_spatially_aligned() {
    for seed in 0..6 {
        let pair = make_synthetic_pair(seed, (64, 64), 3).unwrap();
        let up = luminance(&resize(&pair.a.ir, 2.0).unwrap());
        let (dy, dx) = best_shift(&luminance(&pair.b.ir), &up, 3);
        assert!(dy.abs() <= 1 && dx.abs() <= 1, "seed {seed}: shift ({dy}, {dx})");
    }
}

#[test]
fn palette_is_monotone_in_luminance() {
    let lum = |t: f64| {
        let c = palette(t);
        0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
    };
    for i in 0..100 {
        let (t0, t1) = (i as f64 / 100.0, (i + 1) as f64 / 100.0);
        assert!(lum(t1) > lum(t0));
    }
}

#[test]
fn synthetic_dataset_writes_manifest_and_is_reproducible() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let opts = SynthOptions { n_pairs: 16, seed: 1, resolution: (32, 32), ..Default::default() };
    let m1 = write_synthetic_dataset(d1.path(), &opts).unwrap();
    let m2 = write_synthetic_dataset(d2.path(), &opts).unwrap();
    let manifest = load_manifest(&m1).unwrap();
    assert_eq!(manifest.rows().iter().filter(|r| r.domain == Domain::A).count(), 16);
    assert_eq!(manifest.rows().iter().filter(|r| r.domain == Domain::B).count(), 16);
    assert_eq!(manifest.select(Domain::A, Split::Test).len(), 1);
    assert_eq!(manifest.select(Domain::B, Split::Val).len(), 1);
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    for r in manifest.rows() {
        let rel = r.ir_path.strip_prefix(d1.path()).unwrap();
        assert_eq!(std::fs::read(&r.ir_path).unwrap(), std::fs::read(d2.path().join(rel)).unwrap());
    }
    let a0 = &manifest.rows()[0];
    assert_eq!(manifest.counterpart(a0).unwrap().sample_id, "pair_0000_b");
    let s = load_sample(a0, (16, 16)).unwrap();
    assert!(s.ir.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn split_assignment_counts() {
    let count = |n: usize, s: Split| (0..n).filter(|&i| synthetic_split(i, n, 0.05, 0.05) == s).count();
    assert_eq!((count(16, Split::Train), count(16, Split::Val), count(16, Split::Test)), (14, 1, 1));
    assert_eq!((count(100, Split::Train), count(100, Split::Val), count(100, Split::Test)), (90, 5, 5));
    assert_eq!(count(8, Split::Train), 8 - 2);
    assert!((0..5).all(|i| synthetic_split(i, 5, 0.0, 0.0) == Split::Train));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn epoch_is_a_permutation(n in 1usize..60, seed in any::<u64>()) {
        let mut o = epoch_order(n, seed);
        o.sort_unstable();
        prop_assert_eq!(o, (0..n).collect::<Vec<_>>());
    }
}
