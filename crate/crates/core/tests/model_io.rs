use std::fs;
use std::path::{Path, PathBuf};

use detcert::geometry::{Anchor, Decoder};
use detcert::interval::Matrix;
use detcert::model::{
    detect, load_image, load_model, predict, save_model, shape_sidecar, DetectorHead, Image, Layer, Layout,
    ModelBundle, Network,
};
use detcert::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy_yolov2")
}

/// One anchor, one class, input `[1, 1, 2]` mapped to six outputs.
fn minimal(weights: serde_json::Value, anchor_p: [f64; 4]) -> serde_json::Value {
    json!({
        "format_version": 1,
        "input_shape": [1, 1, 2],
        "layers": [
            {"kind": "flatten"},
            {"kind": "dense", "in_features": 2, "out_features": 6, "inline": true,
             "weights": weights, "bias": [0, 0, 0, 0, 0, 0]}
        ],
        "head": {"decoder": "yolov2", "n_classes": 1,
                 "anchors": [{"p": anchor_p, "scale": 1.0}],
                 "layout": {"kind": "box_major"}}
    })
}

fn write_json(dir: &Path, name: &str, v: &serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

#[test]
fn toy_bundle_loads() {
    let m = load_model(toy_dir().join("model.json")).unwrap();
    assert_eq!(m.input_shape(), [1, 8, 8]);
    assert_eq!(m.head().n_boxes(), 4);
    assert_eq!(m.network().output_len(), 24);
}

#[test]
fn minimal_bundle_loads() {
    let dir = tempfile::tempdir().unwrap();
    let w = json!(vec![0.5; 12]);
    let p = write_json(dir.path(), "m.json", &minimal(w, [0.0, 0.0, 1.0, 1.0]));
    let m = load_model(&p).unwrap();
    assert_eq!(m.head().n_outputs(), 6);
}

#[test]
fn zero_anchor_width_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_json(dir.path(), "m.json", &minimal(json!(vec![0.5; 12]), [0.0, 0.0, 0.0, 1.0]));
    assert!(matches!(load_model(&p), Err(Error::Validation(_))));
}

#[test]
fn dense_dimension_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = minimal(json!(vec![0.5; 12]), [0.0, 0.0, 1.0, 1.0]);
    v["layers"][1]["in_features"] = json!(3);
    v["layers"][1]["weights"] = json!(vec![0.5; 18]);
    let p = write_json(dir.path(), "m.json", &v);
    assert!(matches!(load_model(&p), Err(Error::Validation(_))));
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_model("/nonexistent/model.json"), Err(Error::Io { .. })));
}

#[test]
fn malformed_json_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    fs::write(&p, "{\"format_version\": 1,").unwrap();
    assert!(matches!(load_model(&p), Err(Error::Parse { .. })));
}

fn assert_stable_round_trip(src: &Path) {
    let dir = tempfile::tempdir().unwrap();
    let blobs_src: Vec<PathBuf> = fs::read_dir(src.parent().unwrap())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    for b in &blobs_src {
        fs::copy(b, dir.path().join(b.file_name().unwrap())).unwrap();
    }
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let first = load_model(src).unwrap();
    save_model(&first, &a).unwrap();
    let reloaded = load_model(&a).unwrap();
    assert_eq!(reloaded.network(), first.network());
    save_model(&reloaded, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn inline_round_trip_is_byte_stable() {
    assert_stable_round_trip(&toy_dir().join("model.json"));
}

#[test]
fn blob_round_trip_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    // f32-representable values so the blob is lossless.
    let w: Vec<f32> = (0..12).map(|k| k as f32 * 0.25 - 1.0).collect();
    let bias = [0.5f32, -0.5, 0.0, 0.0, 1.0, 0.0];
    let bytes: Vec<u8> = w.iter().chain(&bias).flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.path().join("dense.bin"), bytes).unwrap();
    let mut v = minimal(json!(null), [0.0, 0.0, 1.0, 1.0]);
    let layer = v["layers"][1].as_object_mut().unwrap();
    layer.remove("inline");
    layer.remove("weights");
    layer.remove("bias");
    layer.insert("blob".into(), json!("dense.bin"));
    let p = write_json(dir.path(), "model.json", &v);
    let m = load_model(&p).unwrap();
    match &m.network().layers()[1] {
        Layer::Dense { weights, bias: b } => {
            assert_eq!(weights.get(0, 1), -0.75);
            assert_eq!(b[0], 0.5);
        }
        other => panic!("unexpected layer {other:?}"),
    }
    assert_stable_round_trip(&p);
}

#[test]
fn forward_constant_and_identity() {
    let constant = Network::new(
        vec![1, 1, 3],
        vec![
            Layer::Flatten,
            Layer::Dense {
                weights: Matrix::zeros(2, 3),
                bias: vec![1.5, -2.0],
            },
        ],
    )
    .unwrap();
    assert_eq!(constant.forward(&[7.0, 8.0, 9.0]).unwrap(), vec![1.5, -2.0]);

    let identity = Network::new(
        vec![1, 1, 3],
        vec![
            Layer::Flatten,
            Layer::Dense {
                weights: Matrix::identity(3),
                bias: vec![0.0; 3],
            },
        ],
    )
    .unwrap();
    assert_eq!(identity.forward(&[7.0, -8.0, 9.0]).unwrap(), vec![7.0, -8.0, 9.0]);
}

#[test]
fn forward_matches_hand_computed_two_layer_net() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (n, h, m) = (rng.gen_range(1..8), rng.gen_range(1..8), rng.gen_range(1..8));
        let w1: Vec<f64> = (0..h * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b1: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..m * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b2: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = 0.1;
        let net = Network::new(
            vec![1, 1, n],
            vec![
                Layer::Flatten,
                Layer::Dense {
                    weights: Matrix::new(h, n, w1.clone()).unwrap(),
                    bias: b1.clone(),
                },
                Layer::LeakyRelu { alpha },
                Layer::Dense {
                    weights: Matrix::new(m, h, w2.clone()).unwrap(),
                    bias: b2.clone(),
                },
            ],
        )
        .unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let hidden: Vec<f64> = (0..h)
            .map(|i| {
                let z = b1[i] + (0..n).map(|j| w1[i * n + j] * x[j]).sum::<f64>();
                if z >= 0.0 {
                    z
                } else {
                    alpha * z
                }
            })
            .collect();
        let want: Vec<f64> = (0..m)
            .map(|i| b2[i] + (0..h).map(|j| w2[i * h + j] * hidden[j]).sum::<f64>())
            .collect();
        for (a, b) in net.forward(&x).unwrap().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Two yolov2 anchors, one class, box-major outputs taken straight from
/// the input vector.
fn passthrough() -> ModelBundle {
    let net = Network::new(
        vec![1, 1, 12],
        vec![
            Layer::Flatten,
            Layer::Dense {
                weights: Matrix::identity(12),
                bias: vec![0.0; 12],
            },
        ],
    )
    .unwrap();
    let anchors = vec![
        Anchor::new([0.0, 0.0, 1.0, 1.0], 4.0).unwrap(),
        Anchor::new([1.0, 0.0, 1.0, 1.0], 4.0).unwrap(),
    ];
    let head = DetectorHead::new(Decoder::Yolov2, 1, anchors, Layout::BoxMajor).unwrap();
    ModelBundle::new(net, head).unwrap()
}

fn logits(obj: [f64; 2]) -> Vec<f64> {
    vec![0.0, 0.0, 0.0, 0.0, obj[0], 1.0, 0.0, 0.0, 0.0, 0.0, obj[1], 1.0]
}

#[test]
fn predict_examples() {
    let m = passthrough();
    let img = |v: Vec<f64>| Image::new([1, 1, 12], v).unwrap();
    assert_eq!(predict(&m, &img(logits([-10.0, -10.0])), 0.5).unwrap(), None);

    let d = predict(&m, &img(logits([10.0, -10.0])), 0.5).unwrap().unwrap();
    assert_eq!(d.box_index, 0);
    assert_eq!([d.bbox.z0, d.bbox.z1, d.bbox.z2, d.bbox.z3], [0.0, 0.0, 4.0, 4.0]);

    let d = predict(&m, &img(logits([0.0, 2.0])), 0.5).unwrap().unwrap();
    assert_eq!(d.box_index, 1);
    assert_eq!(d.class_id, 0);

    // With a zero threshold a box always comes back; ties pick the lowest index.
    let d = detect(m.head(), &logits([-30.0, -30.0]), 0.0).unwrap();
    assert_eq!(d.box_index, 0);
}

#[test]
fn predict_rejects_wrong_image_shape() {
    let m = passthrough();
    let img = Image::new([1, 2, 6], vec![0.0; 12]).unwrap();
    assert!(predict(&m, &img, 0.5).is_err());
}

#[test]
fn raw_f32_image_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("img.f32");
    let values = [0.0f32, 0.25, 0.5, 1.0, 0.75, 0.125];
    fs::write(&p, values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()).unwrap();
    let side = shape_sidecar(&p);
    assert_eq!(side.file_name().unwrap(), "img.shape.json");
    fs::write(&side, r#"{"shape":[1,2,3]}"#).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!(img.shape(), [1, 2, 3]);
    assert_eq!(img.data(), &[0.0, 0.25, 0.5, 1.0, 0.75, 0.125]);

    fs::write(&side, r#"{"shape":[1,2,2]}"#).unwrap();
    assert!(load_image(&p).is_err());
}

#[test]
fn toy_images_are_detected_on_their_cell() {
    let m = load_model(toy_dir().join("model.json")).unwrap();
    let ann: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(toy_dir().join("annotations.json")).unwrap()).unwrap();
    for a in ann {
        let img = load_image(toy_dir().join(a["image"].as_str().unwrap())).unwrap();
        let d = predict(&m, &img, 0.15).unwrap().expect("toy image yields a detection");
        let want: Vec<f64> = serde_json::from_value(a["box"].clone()).unwrap();
        let got = [d.bbox.z0, d.bbox.z1, d.bbox.z2, d.bbox.z3];
        let g = detcert::geometry::CornerBox::new(want[0], want[1], want[2], want[3]);
        assert!(detcert::geometry::iou(&d.bbox, &g) >= 0.5, "{got:?} vs {want:?}");
    }
}
