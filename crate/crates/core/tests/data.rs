mod common;

use image::{ImageBuffer, Luma, Rgb};
use ndarray::{Array2, Array4, Axis};
use proptest::prelude::*;
use uwdepth::data::{
    bilateral_filter_depth, load_image, depth_to_tensor, normalize_depth, sample_patch, synthesize_haze, CorpusIndex,
    HazeParams, PrepConfig, RgbdSample, UnpairedSampler,
};
use uwdepth::fixtures::write_training_corpus;
use uwdepth::tensor::{ImageTensor, ValueRange};
use uwdepth::Error;

fn save_rgb(path: &std::path::Path, w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) {
    ImageBuffer::from_fn(w, h, |x, y| Rgb(f(x, y))).save(path).unwrap();
}

#[test]
fn mid_gray_maps_to_linear_value() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gray.png");
    save_rgb(&p, 8, 8, |_, _| [128; 3]);
    let t = load_image(&p, (8, 8)).unwrap();
    let expected = 128.0 / 127.5 - 1.0;
    assert!(t.data().iter().all(|v| (v - expected).abs() < 1e-6));
}

#[test]
fn black_maps_to_minus_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("black.png");
    save_rgb(&p, 5, 7, |_, _| [0; 3]);
    let t = load_image(&p, (7, 5)).unwrap();
    assert!(t.data().iter().all(|&v| v == -1.0));
}

#[test]
fn resize_hits_target_dims() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("big.png");
    save_rgb(&p, 512, 512, |x, y| [(x % 256) as u8, (y % 256) as u8, 7]);
    let t = load_image(&p, (256, 256)).unwrap();
    assert_eq!(t.dims(), (1, 256, 256, 3));
    assert_eq!(t.range(), ValueRange::NETWORK);
}

#[test]
fn sixteen_bit_png_decodes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d16.png");
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(4, 4, |_, _| Rgb([65535, 0, 65535]));
    img.save(&p).unwrap();
    let t = load_image(&p, (4, 4)).unwrap();
    assert!(t.item(0).iter().step_by(3).all(|&v| (v - 1.0).abs() < 1e-6));
}

#[test]
fn load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("broken.png");
    std::fs::write(&bad, b"not an image").unwrap();
    let err = load_image(&bad, (4, 4)).unwrap_err();
    assert!(err.to_string().contains("broken.png"));
    assert_eq!(err.exit_code(), 2);
    let missing = dir.path().join("missing.png");
    assert!(load_image(&missing, (4, 4)).unwrap_err().to_string().contains("missing.png"));

    let ok = dir.path().join("ok.png");
    save_rgb(&ok, 4, 4, |_, _| [1, 2, 3]);
    assert!(matches!(load_image(&ok, (0, 4)).unwrap_err(), Error::Argument(_)));
}

fn depth_tensor(map: &Array2<f64>) -> ImageTensor {
    depth_to_tensor(map).unwrap()
}

fn depth_map(t: &ImageTensor) -> Array2<f64> {
    t.data().index_axis(Axis(0), 0).index_axis(Axis(2), 0).to_owned()
}

/// Direct double loop of the bilateral sum over the truncated window.
fn bilateral_oracle(img: &Array2<f64>, ss: f64, sr: f64) -> Array2<f64> {
    let (h, w) = img.dim();
    let r = (2.0 * ss).ceil() as i64;
    let mut out = Array2::zeros((h, w));
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let c = img[[y as usize, x as usize]];
            let mut num = 0.0;
            let mut den = 0.0;
            for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                    let v = img[[yy as usize, xx as usize]];
                    let d2 = ((yy - y).pow(2) + (xx - x).pow(2)) as f64;
                    let wgt = (-d2 / (2.0 * ss * ss)).exp() * (-(v - c).powi(2) / (2.0 * sr * sr)).exp();
                    num += wgt * v;
                    den += wgt;
                }
            }
            out[[y as usize, x as usize]] = num / den;
        }
    }
    out
}

#[test]
fn bilateral_constant_plane_unchanged() {
    let map = Array2::from_elem((9, 9), 3.25);
    let out = depth_map(&bilateral_filter_depth(&depth_tensor(&map), 5.0, 0.1).unwrap());
    assert!(out.iter().all(|&v| (v - 3.25).abs() < 1e-12));
}

#[test]
fn bilateral_preserves_step_edge() {
    let map = Array2::from_shape_fn((11, 11), |(_, x)| if x < 5 { 1.0 } else { 6.0 });
    let out = depth_map(&bilateral_filter_depth(&depth_tensor(&map), 2.0, 0.1).unwrap());
    let oracle = bilateral_oracle(&map, 2.0, 0.1);
    for ((y, x), v) in out.indexed_iter() {
        assert!((v - oracle[[y, x]]).abs() < 1e-6);
        let mid = 3.5;
        assert_eq!(*v > mid, x >= 5, "edge moved at ({y},{x})");
    }
}

#[test]
fn bilateral_reduces_noise_variance() {
    let mut r = common::rng(4);
    use rand_distr::{Distribution, Normal};
    let n = Normal::new(0.0, 0.05).unwrap();
    let map = Array2::from_shape_fn((11, 11), |_| 2.0 + n.sample(&mut r));
    let out = depth_map(&bilateral_filter_depth(&depth_tensor(&map), 2.0, 0.5).unwrap());
    let var = |a: &Array2<f64>| {
        let m = a.mean().unwrap();
        a.iter().map(|v| (v - m).powi(2)).sum::<f64>() / a.len() as f64
    };
    assert!(var(&out) < var(&map));
    let oracle = bilateral_oracle(&map, 2.0, 0.5);
    assert!(out.iter().zip(oracle.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
}

#[test]
fn bilateral_rejects_non_positive_sigma() {
    let t = depth_tensor(&Array2::from_elem((3, 3), 1.0));
    assert!(matches!(bilateral_filter_depth(&t, 0.0, 1.0).unwrap_err(), Error::Argument(_)));
    assert!(matches!(bilateral_filter_depth(&t, 1.0, -1.0).unwrap_err(), Error::Argument(_)));
}

fn rgbd(color: Array4<f64>, depth: Array2<f64>) -> RgbdSample {
    let mask = Array2::from_elem(depth.dim(), true);
    RgbdSample::new(
        ImageTensor::new(color, ValueRange::UNIT).unwrap(),
        depth_tensor(&depth),
        mask,
    )
    .unwrap()
}

#[test]
fn haze_closed_form_value() {
    let sample = rgbd(Array4::from_elem((1, 2, 2, 3), 0.2), Array2::from_elem((2, 2), 2f64.ln()));
    let out = synthesize_haze(&sample, &HazeParams::new(1.0, [1.0; 3]).unwrap()).unwrap();
    assert!(out.color.data().iter().all(|v| (v - 0.6).abs() < 1e-12));
}

#[test]
fn haze_at_great_depth_is_airlight() {
    let a = [0.3, 0.6, 0.9];
    let sample = rgbd(Array4::from_elem((1, 3, 3, 3), 0.1), Array2::from_elem((3, 3), 20.0));
    let out = synthesize_haze(&sample, &HazeParams::new(1.0, a).unwrap()).unwrap();
    for ((_, _, _, c), v) in out.color.data().indexed_iter() {
        assert!((v - a[c]).abs() < 1e-5);
    }
}

#[test]
fn haze_rejects_negative_valid_depth() {
    let color = ImageTensor::filled((1, 2, 2, 3), 0.5, ValueRange::UNIT).unwrap();
    let depth = ImageTensor::new(Array4::from_elem((1, 2, 2, 1), -1.0), ValueRange { lo: -2.0, hi: 2.0 }).unwrap();
    let sample = RgbdSample {
        color,
        depth,
        depth_valid_mask: Array2::from_elem((2, 2), true),
    };
    let err = synthesize_haze(&sample, &HazeParams::default()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bilateral_matches_direct_oracle(h in 1usize..=32, w in 1usize..=32, ss in 0.5f64..3.0, sr in 0.05f64..2.0, seed in any::<u64>()) {
        let map = common::random_map(h, w, 0.0, 5.0, seed);
        let out = depth_map(&bilateral_filter_depth(&depth_tensor(&map), ss, sr).unwrap());
        let oracle = bilateral_oracle(&map, ss, sr);
        for (a, b) in out.iter().zip(oracle.iter()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        let (lo, hi) = (map.iter().copied().fold(f64::INFINITY, f64::min), map.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        prop_assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn haze_is_convex_combination(seed in any::<u64>(), beta in 0.0f64..3.0, a in prop::array::uniform3(0.0f64..=1.0)) {
        let mut r = common::rng(seed);
        use rand::Rng;
        let color = Array4::from_shape_fn((1, 6, 5, 3), |_| r.random_range(0.0..=1.0));
        let depth = Array2::from_shape_fn((6, 5), |_| r.random_range(0.0..15.0));
        let sample = rgbd(color.clone(), depth.clone());
        let out = synthesize_haze(&sample, &HazeParams::new(beta, a).unwrap()).unwrap();
        prop_assert_eq!(out.depth.data(), sample.depth.data());
        for ((b, y, x, c), v) in out.color.data().indexed_iter() {
            let j = color[[b, y, x, c]];
            prop_assert!(*v >= j.min(a[c]) - 1e-12 && *v <= j.max(a[c]) + 1e-12);
        }
    }

    #[test]
    fn transmission_bounded_and_decreasing(beta in 1e-3f64..5.0, d1 in 0.0f64..50.0, dd in 1e-3f64..10.0) {
        let p = HazeParams::new(beta, [1.0; 3]).unwrap();
        let (t1, t2) = (p.transmission(d1), p.transmission(d1 + dd));
        prop_assert!(t1 > 0.0 && t1 <= 1.0);
        prop_assert!(t2 < t1 || t1 == 0.0);
    }
}

#[test]
fn haze_zero_depth_is_identity() {
    let mut r = common::rng(1);
    use rand::Rng;
    let color = Array4::from_shape_fn((1, 4, 4, 3), |_| r.random_range(0.0..=1.0));
    let sample = rgbd(color.clone(), Array2::zeros((4, 4)));
    let out = synthesize_haze(&sample, &HazeParams::new(1.3, [0.9, 0.8, 0.7]).unwrap()).unwrap();
    assert_eq!(out.color.data(), &color);
}

#[test]
fn haze_params_validation() {
    assert!(HazeParams::new(-0.1, [1.0; 3]).is_err());
    assert!(HazeParams::new(1.0, [1.2, 0.0, 0.0]).is_err());
    assert!(HazeParams::new(0.0, [1.0; 3]).is_ok());
}

#[test]
fn depth_normalization_endpoints() {
    assert_eq!(normalize_depth(0.0, 10.0), -1.0);
    assert_eq!(normalize_depth(10.0, 10.0), 1.0);
    assert_eq!(normalize_depth(25.0, 10.0), 1.0);
    assert_eq!(normalize_depth(5.0, 10.0), 0.0);
}

#[test]
fn patch_round_trip_preserves_range() {
    let img = common::random_image((1, 20, 20, 3), 3);
    let p = sample_patch(&img, 8, &mut common::rng(0)).unwrap();
    assert_eq!(p.range(), img.range());
    assert_eq!(p.dims(), (1, 8, 8, 3));
}

fn tiny_corpus(n: usize) -> (tempfile::TempDir, CorpusIndex, CorpusIndex, PrepConfig) {
    let dir = tempfile::tempdir().unwrap();
    write_training_corpus(dir.path(), n, n, 40, &HazeParams::default(), 11).unwrap();
    let (uw, aerial) = CorpusIndex::scan_root(dir.path()).unwrap();
    let prep = PrepConfig {
        image_size: 32,
        ..PrepConfig::default()
    };
    (dir, uw, aerial, prep)
}

#[test]
fn unpaired_batch_shapes_and_ranges() {
    let (_dir, uw, aerial, prep) = tiny_corpus(3);
    let mut s = UnpairedSampler::new(uw, aerial, prep).unwrap();
    let (x, y) = s.make_unpaired_batch(2, 16, &mut common::rng(5)).unwrap();
    assert_eq!(x.dims(), (2, 16, 16, 3));
    assert_eq!(y.dims(), (2, 16, 16, 4));
    assert!(y.data().index_axis(Axis(3), 3).iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(x.range(), ValueRange::NETWORK);
}

#[test]
fn unpaired_batch_deterministic() {
    let (_dir, uw, aerial, prep) = tiny_corpus(3);
    let mut a = UnpairedSampler::new(uw.clone(), aerial.clone(), prep.clone()).unwrap();
    let mut b = UnpairedSampler::new(uw, aerial, prep).unwrap();
    let ra = a.make_unpaired_batch(3, 16, &mut common::rng(9)).unwrap();
    let rb = b.make_unpaired_batch(3, 16, &mut common::rng(9)).unwrap();
    assert_eq!(ra.0.data(), rb.0.data());
    assert_eq!(ra.1.data(), rb.1.data());
}

#[test]
fn empty_corpus_is_config_error() {
    let (_dir, uw, mut aerial, prep) = tiny_corpus(1);
    aerial.entries.clear();
    let err = UnpairedSampler::new(uw, aerial, prep).err().unwrap();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn aerial_scan_requires_depth() {
    let (dir, _, _, _) = tiny_corpus(2);
    let depth = dir.path().join("aerial/depth/rgbd0001.png");
    std::fs::remove_file(depth).unwrap();
    assert!(matches!(CorpusIndex::scan_root(dir.path()).unwrap_err(), Error::Data(_)));
}

#[test]
fn invalid_depth_pixels_are_filled() {
    let dir = tempfile::tempdir().unwrap();
    let (cdir, ddir) = (dir.path().join("color"), dir.path().join("depth"));
    std::fs::create_dir_all(&cdir).unwrap();
    std::fs::create_dir_all(&ddir).unwrap();
    save_rgb(&cdir.join("a.png"), 8, 8, |_, _| [10, 20, 30]);
    let d: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(8, 8, |x, _| Luma([if x < 2 { 0 } else { 2000 }]));
    d.save(ddir.join("a.png")).unwrap();
    let index = CorpusIndex::scan_aerial(dir.path()).unwrap();
    let prep = PrepConfig {
        image_size: 8,
        ..PrepConfig::default()
    };
    let s = uwdepth::data::load_rgbd(&index.entries[0], &prep).unwrap();
    assert!(s.depth.data().iter().all(|v| (v - 2.0).abs() < 1e-9));
    assert!(!s.depth_valid_mask[[0, 0]]);
    assert!(s.depth_valid_mask[[0, 5]]);
}
