use proptest::prelude::*;

use radarfuse::config::Config;
use radarfuse::dataset::{
    format_detections, format_labels, parse_detections, parse_labels, Box2D, Box3D, ClassList,
    Label, RangeSpec,
};
use radarfuse::eval::{iou_3d, rotated_iou_bev};
use radarfuse::geometry::CalibrationSet;
use radarfuse::neck::combine_multiscale;
use radarfuse::nn::{FeatureMap, FeaturePyramid, WeightStore};
use radarfuse::rng::SeededRng;
use radarfuse::sparse::{ConvKind, SparseConvLayer};
use radarfuse::voxel::{pack_key, unpack_key, SparseTensor, VoxelGridSpec};

fn boxes() -> impl Strategy<Value = Box3D> {
    (
        -20.0..20.0f64,
        -20.0..20.0f64,
        -2.0..2.0f64,
        0.2..6.0f64,
        0.2..3.0f64,
        0.2..3.0f64,
        -3.2..3.2f64,
    )
        .prop_map(|(x, y, z, l, w, h, yaw)| Box3D::new([x, y, z], [l, w, h], yaw, 0).unwrap())
}

fn grid(n: usize) -> VoxelGridSpec {
    VoxelGridSpec::new(RangeSpec::new([0.0; 3], [n as f64; 3]).unwrap(), [1.0; 3]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn key_round_trip(z in 0i32..1 << 20, y in 0i32..1 << 20, x in 0i32..1 << 20, s in 0u32..8) {
        let stride = 1 << s;
        prop_assert_eq!(unpack_key(pack_key([z, y, x], stride)), ([z, y, x], stride));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in boxes(), b in boxes()) {
        for f in [rotated_iou_bev, iou_3d] {
            let ab = f(&a, &b);
            let ba = f(&b, &a);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-12);
        }
        prop_assert!(iou_3d(&a, &b) <= 1.0);
    }

    #[test]
    fn iou_is_rigid_invariant(a in boxes(), b in boxes(), dx in -10.0..10.0f64, dy in -10.0..10.0f64, t in -3.0..3.0f64) {
        let move_box = |bx: &Box3D| {
            let (s, c) = t.sin_cos();
            let p = bx.center;
            Box3D::new([c * p[0] - s * p[1] + dx, s * p[0] + c * p[1] + dy, p[2]], bx.size, bx.yaw + t, 0).unwrap()
        };
        let before = rotated_iou_bev(&a, &b);
        let after = rotated_iou_bev(&move_box(&a), &move_box(&b));
        prop_assert!((before - after).abs() < 1e-9, "{} vs {}", before, after);
    }

    #[test]
    fn box_contains_its_center_and_not_far_points(b in boxes()) {
        prop_assert!(b.contains(b.center));
        let r = b.size.iter().fold(0.0f64, |m, v| m.max(*v));
        prop_assert!(!b.contains([b.center[0] + r, b.center[1] + r, b.center[2]]));
        for c in b.corners() {
            let mid = [(c[0] + b.center[0]) / 2.0, (c[1] + b.center[1]) / 2.0, (c[2] + b.center[2]) / 2.0];
            prop_assert!(b.contains(mid));
        }
    }

    #[test]
    fn weights_bytes_round_trip(vals in prop::collection::vec(-1e3f32..1e3, 1..64), rank in 1usize..3) {
        let mut store = WeightStore::new();
        let data: Vec<f64> = vals.iter().map(|v| f64::from(*v)).collect();
        let shape = if rank == 1 { vec![data.len()] } else { vec![1, data.len()] };
        store.insert("a.weight", shape.clone(), &data);
        store.insert("b", vec![1], &[0.5]);
        let back = WeightStore::from_bytes(&store.to_bytes()).unwrap();
        prop_assert_eq!(back.take("a.weight", &shape).unwrap(), data);
        prop_assert_eq!(back.len(), 2);
    }

    #[test]
    fn pyramid_bytes_round_trip(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let levels = (0..2)
            .map(|_| {
                FeatureMap::new(h, w, c, (0..h * w * c).map(|_| f64::from(rng.uniform(-2.0, 2.0) as f32)).collect())
                    .unwrap()
            })
            .collect();
        let p = FeaturePyramid::new(levels).unwrap();
        prop_assert_eq!(FeaturePyramid::from_bytes(&p.to_bytes()).unwrap(), p);
    }

    #[test]
    fn calibration_text_round_trip(f in 100.0..2000.0f64, cx in 0.0..1000.0f64, cy in 0.0..600.0f64, tx in -2.0..2.0f64) {
        let c = CalibrationSet::pinhole(f, cx, cy, [tx, 0.3, -0.1], (1280, 720)).unwrap();
        let back = CalibrationSet::from_kitti_str(&c.to_kitti_string(), "calib.txt", None).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn labels_and_detections_round_trip(b in boxes(), score in 0.0..1.0f64) {
        let classes = ClassList::default();
        let label = Label { bbox: b, region: Some(Box2D { min: [1.0, 2.0], max: [30.5, 40.25] }) };
        let parsed = parse_labels(&format_labels(std::slice::from_ref(&label), &classes), "l.txt", &classes).unwrap();
        prop_assert_eq!(parsed.labels.len(), 1);
        let got = &parsed.labels[0];
        for a in 0..3 {
            prop_assert!((got.bbox.center[a] - b.center[a]).abs() < 1e-9);
            prop_assert!((got.bbox.size[a] - b.size[a]).abs() < 1e-9);
        }
        prop_assert_eq!(got.region, label.region);
        let det = b.with_score(score);
        let back = parse_detections(&format_detections(&[det], &classes), "d.txt", &classes).unwrap();
        prop_assert!((back[0].score - score).abs() < 1e-9);
        prop_assert!((back[0].yaw - b.yaw).abs() < 1e-9);
    }

    #[test]
    fn sparse_conv_ignores_row_order(seed in any::<u64>(), n_active in 1usize..60) {
        let mut rng = SeededRng::new(seed);
        let spec = grid(6);
        let mut coords = Vec::new();
        while coords.len() < n_active {
            let c = [rng.below(6) as i32, rng.below(6) as i32, rng.below(6) as i32];
            if !coords.contains(&c) {
                coords.push(c);
            }
        }
        let feats: Vec<f64> = (0..coords.len() * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let a = SparseTensor::new(coords.clone(), feats.clone(), 2, 1, spec).unwrap();
        let mut rev_c = coords.clone();
        rev_c.reverse();
        let rev_f: Vec<f64> = feats.chunks(2).rev().flatten().copied().collect();
        let b = SparseTensor::new(rev_c, rev_f, 2, 1, spec).unwrap();
        for kind in [ConvKind::Submanifold, ConvKind::Strided] {
            let l = SparseConvLayer::seeded(kind, 2, 3, &mut SeededRng::new(seed ^ 1));
            prop_assert_eq!(l.forward(&a).unwrap(), l.forward(&b).unwrap());
        }
    }

    #[test]
    fn neck_ignores_input_order(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let spec = grid(32);
        let tensors: Vec<SparseTensor> = [2u32, 4, 8]
            .iter()
            .map(|&s| {
                let d = spec.dims_at(s);
                let mut coords = Vec::new();
                for _ in 0..10 {
                    let c = [rng.below(d[0]) as i32, rng.below(d[1]) as i32, rng.below(d[2]) as i32];
                    if !coords.contains(&c) {
                        coords.push(c);
                    }
                }
                let f = (0..coords.len() * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
                SparseTensor::new(coords, f, 3, s, spec).unwrap()
            })
            .collect();
        let fwd = combine_multiscale(&tensors).unwrap();
        let rev: Vec<SparseTensor> = tensors.iter().rev().cloned().collect();
        prop_assert_eq!(fwd, combine_multiscale(&rev).unwrap());
    }
}

#[test]
fn config_json_round_trip_and_strictness() {
    for cfg in [Config::vod(), Config::tj4d()] {
        assert_eq!(Config::from_json(&cfg.to_json()).unwrap(), cfg);
    }
    let mut v: serde_json::Value = serde_json::from_str(&Config::vod().to_json()).unwrap();
    v["model"]["mystery"] = serde_json::json!(1);
    let err = Config::from_json(&v.to_string()).unwrap_err();
    assert!(matches!(err, radarfuse::Error::Config(_)), "{err}");
    let mut v: serde_json::Value = serde_json::from_str(&Config::vod().to_json()).unwrap();
    v["version"] = serde_json::json!(2);
    assert!(matches!(
        Config::from_json(&v.to_string()),
        Err(radarfuse::Error::Config(_))
    ));
}
