mod common;

use common::{decode_config, gated_equals_dense, random_inference_instance};
use mono3d::dataio::TensorContainer;
use mono3d::infer::{infer, topk_select, dense_classify, InferMode};
use mono3d::nn::{DetectorHeads, HeadMacReport, OrientationMode, HIDDEN};
use mono3d::synth::random_feature_maps;

#[test]
fn gated_equals_dense_on_random_instances() {
    for seed in 0..20 {
        let (f, h, cfg, n) = random_inference_instance(seed);
        for k in [1, 3, n / 2 + 1, n, n + 5] {
            assert!(gated_equals_dense(&f, &h, &cfg, k), "seed {seed} k {k}");
        }
    }
}

#[test]
fn odd_map_sizes_cover_borders() {
    for (h8, w8) in [(1, 1), (1, 9), (5, 7), (3, 2)] {
        let f = random_feature_maps(6, h8, w8, 4).unwrap();
        let heads = DetectorHeads::random(6, 3, OrientationMode::So3, 5);
        let n = f.total_locations();
        assert_eq!(n, h8 * w8 + h8.div_ceil(2) * w8.div_ceil(2));
        assert!(gated_equals_dense(&f, &heads, &decode_config(OrientationMode::So3), n), "{h8}x{w8}");
    }
}

#[test]
fn smaller_k_is_a_prefix() {
    let (f, h, cfg, n) = random_inference_instance(77);
    let all = infer(&f, &h, n, InferMode::Gated, &cfg).unwrap();
    for k in [1, 2, n / 3, n - 1] {
        let part = infer(&f, &h, k, InferMode::Gated, &cfg).unwrap();
        assert_eq!(part.centers[..], all.centers[..k]);
        assert_eq!(part.detections.0[..], all.detections.0[..k]);
    }
    let scores: Vec<f32> = all.centers.iter().map(|c| c.score).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn topk_indices_are_unique() {
    let (f, h, _, n) = random_inference_instance(3);
    let scores = dense_classify(&f, &h).unwrap();
    let mut idx: Vec<usize> = topk_select(&scores, n).unwrap().iter().map(|c| c.flat_index).collect();
    idx.sort();
    assert_eq!(idx, (0..n).collect::<Vec<_>>());
    assert!(topk_select(&scores, 0).is_err());
}

#[test]
fn mac_formula_closed_form() {
    let c = 64u64;
    let heads = DetectorHeads::random(64, 3, OrientationMode::MultiBin, 1);
    let report = HeadMacReport::new(&heads, &[(48, 160), (24, 80)], 50);
    let hidden = HIDDEN as u64;
    let per_loc: u64 = heads
        .regression_heads()
        .iter()
        .map(|p| 9 * c * hidden + hidden * hidden + hidden * p.out_channels() as u64)
        .sum();
    assert_eq!(report.locations, 9600);
    assert_eq!(report.regression_dense, 9600 * per_loc);
    assert_eq!(report.regression_gated, 50 * per_loc);
    let (num, den) = report.regression_ratio();
    assert_eq!(num * 9600, den * 50);
    assert!(num * 100 < den);
}

#[test]
fn weights_roundtrip_gives_identical_inference() {
    let (f, h, cfg, n) = random_inference_instance(12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("heads.bin");
    h.to_container().unwrap().write_file(&path).unwrap();
    let back = DetectorHeads::from_container(&TensorContainer::read_file(&path).unwrap()).unwrap();
    assert_eq!(back, h);
    let a = infer(&f, &h, n, InferMode::Gated, &cfg).unwrap();
    let b = infer(&f, &back, n, InferMode::Gated, &cfg).unwrap();
    assert!(a.detections.bitwise_eq(&b.detections));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let f = random_feature_maps(8, 4, 4, 0).unwrap();
    let heads = DetectorHeads::random(6, 3, OrientationMode::MultiBin, 0);
    assert!(infer(&f, &heads, 5, InferMode::Gated, &decode_config(OrientationMode::MultiBin)).is_err());
    let heads = DetectorHeads::random(8, 3, OrientationMode::MultiBin, 0);
    assert!(infer(&f, &heads, 5, InferMode::Gated, &decode_config(OrientationMode::So3)).is_err());
    assert!(infer(&f, &heads, 0, InferMode::Dense, &decode_config(OrientationMode::MultiBin)).is_err());
}
