use super::*;
use crate::features::Selector;
use crate::models::cnn::{cnn_predict, cnn_train_with_arch, StageSpec};
use crate::models::rf::{rf_predict, rf_train};
use crate::query::{CnnPreset, FilterBound, Statistic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample_filter() -> FilterSpec {
    FilterSpec {
        bounds: vec![
            FilterBound {
                selector: Selector::Band(0),
                statistic: Statistic::Mean,
                min: Some(0.1),
                max: None,
            },
            FilterBound {
                selector: Selector::Ndvi,
                statistic: Statistic::Mean,
                min: Some(0.0),
                max: Some(1.0),
            },
        ],
    }
}

fn training_blobs(n_per_class: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for class in 0..2usize {
        let mean = if class == 0 { 0.0 } else { 10.0 };
        for _ in 0..n_per_class {
            x.push(vec![mean + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            y.push(class);
        }
    }
    (x, y)
}

fn forest_blob() -> (ModelBlob, Vec<Vec<f64>>) {
    let (x, y) = training_blobs(25, 3);
    let config = RandomForestConfig {
        n_estimators: 7,
        max_depth: 4,
        seed: 3,
        ..RandomForestConfig::default()
    };
    let model = rf_train(&x, &y, 2, &config).unwrap();
    let blob = ModelBlob {
        class_map: vec!["spruce".into(), "beech".into()],
        feature_spec: Some(FeatureSpec::default_for_channels(2, false)),
        filter_spec: sample_filter(),
        ndvi_bands: Some((0, 1)),
        layer_ids: vec!["sentinel.b04".into(), "sentinel.b08".into()],
        window_size: 9,
        model: TrainedModel::Forest(model),
    };
    (blob, x)
}

fn cnn_blob() -> (ModelBlob, Vec<Vec<f32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for class in 0..2usize {
        let mean = if class == 0 { -1.0f32 } else { 1.0 };
        for _ in 0..6 {
            x.push(
                (0..64)
                    .map(|_| mean + rng.gen_range(-0.2f32..0.2))
                    .collect::<Vec<f32>>(),
            );
            y.push(class);
        }
    }
    let config = FlexCnnConfig {
        epochs: 2,
        batch_size: 8,
        seed: 11,
        ..FlexCnnConfig::desk(1, 2, CnnPreset::FlexCnnSmall)
    };
    let arch = ArchSpec {
        stem: None,
        stages: vec![
            StageSpec {
                width: 3,
                blocks: 1,
                convs_per_block: 1,
                skip: false,
            },
            StageSpec {
                width: 4,
                blocks: 1,
                convs_per_block: 1,
                skip: true,
            },
        ],
    };
    let (net, _) = cnn_train_with_arch(&x, &y, &config, &arch).unwrap();
    let blob = ModelBlob {
        class_map: vec!["water".into(), "forest".into()],
        feature_spec: None,
        filter_spec: FilterSpec::default(),
        ndvi_bands: None,
        layer_ids: vec!["s2.gray".into()],
        window_size: 8,
        model: TrainedModel::Cnn(net),
    };
    (blob, x)
}

/// Re-serialize the blob with an edited header (lengths fixed up).
fn patch_header(bytes: &[u8], edit: impl FnOnce(&mut Value)) -> Vec<u8> {
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut v: Value = serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
    edit(&mut v);
    let new_header = serde_json::to_vec(&v).unwrap();
    let mut out = Vec::new();
    out.extend_from_slice(&bytes[..8]);
    out.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
    out.extend_from_slice(&new_header);
    out.extend_from_slice(&bytes[12 + header_len..]);
    out
}

fn body_start(bytes: &[u8]) -> usize {
    12 + u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize
}

/// Overwrite the float at payload position `idx`.
fn poke_payload(bytes: &[u8], idx: usize, value: f32) -> Vec<u8> {
    let mut out = bytes.to_vec();
    let off = body_start(bytes) + idx * 4;
    out[off..off + 4].copy_from_slice(&value.to_le_bytes());
    out
}

#[test]
fn preamble_layout_is_stable() {
    let (blob, _) = forest_blob();
    let bytes = blob.encode();
    assert_eq!(&bytes[..4], b"AGMB");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(BLOB_FORMAT_VERSION, 1);
}

#[test]
fn forest_round_trip_is_exact() {
    let (blob, x) = forest_blob();
    let bytes = blob.encode();
    let back = ModelBlob::decode(&bytes).unwrap();
    assert_eq!(back, blob);
    let (TrainedModel::Forest(orig), TrainedModel::Forest(dec)) = (&blob.model, &back.model)
    else {
        panic!("expected forests");
    };
    assert_eq!(rf_predict(dec, &x).unwrap(), rf_predict(orig, &x).unwrap());
    assert_eq!(back.architecture_name(), "random_forest");
}

#[test]
fn cnn_round_trip_is_exact() {
    let (blob, x) = cnn_blob();
    let bytes = blob.encode();
    let back = ModelBlob::decode(&bytes).unwrap();
    assert_eq!(back, blob);
    let (TrainedModel::Cnn(orig), TrainedModel::Cnn(dec)) = (&blob.model, &back.model) else {
        panic!("expected cnns");
    };
    let (pa, proba) = cnn_predict(orig, &x).unwrap();
    let (pb, probb) = cnn_predict(dec, &x).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(proba, probb);
}

#[test]
fn encode_is_byte_stable() {
    let (blob, _) = forest_blob();
    assert_eq!(blob.encode(), blob.encode());
    let (blob, _) = cnn_blob();
    assert_eq!(blob.encode(), blob.encode());
}

#[test]
fn version_mismatch_reports_both_numbers() {
    let (blob, _) = forest_blob();
    let mut bytes = blob.encode();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    match ModelBlob::decode(&bytes) {
        Err(Error::BlobVersion { expected: 1, got: 99 }) => {}
        other => panic!("expected version error, got {other:?}"),
    }
}

#[test]
fn corrupted_blobs_are_rejected() {
    let (blob, _) = forest_blob();
    let bytes = blob.encode();

    // wrong magic
    let mut b = bytes.clone();
    b[0] = b'X';
    assert!(matches!(ModelBlob::decode(&b), Err(Error::BlobCorrupt(_))));
    // shorter than the preamble
    assert!(matches!(
        ModelBlob::decode(&bytes[..8]),
        Err(Error::BlobCorrupt(_))
    ));
    // header bytes that are not JSON
    let mut b = bytes.clone();
    b[12] = b'X';
    assert!(matches!(ModelBlob::decode(&b), Err(Error::BlobCorrupt(_))));
    // payload shorter than the arrays declare
    assert!(matches!(
        ModelBlob::decode(&bytes[..bytes.len() - 4]),
        Err(Error::BlobCorrupt(_))
    ));
    // payload longer than the arrays declare
    let mut b = bytes.clone();
    b.extend_from_slice(&1.0f32.to_le_bytes());
    assert!(matches!(ModelBlob::decode(&b), Err(Error::BlobCorrupt(_))));
}

#[test]
fn unknown_architecture_is_rejected() {
    let (blob, _) = forest_blob();
    let bytes = patch_header(&blob.encode(), |v| {
        v["architecture"] = Value::String("perceptron".into());
    });
    match ModelBlob::decode(&bytes) {
        Err(Error::BlobCorrupt(msg)) => assert!(msg.contains("perceptron"), "{msg}"),
        other => panic!("expected corrupt error, got {other:?}"),
    }
}

#[test]
fn class_map_length_must_match_model() {
    let (blob, _) = forest_blob();
    let bytes = patch_header(&blob.encode(), |v| {
        v["class_map"]
            .as_array_mut()
            .unwrap()
            .push(Value::String("extra".into()));
    });
    assert!(matches!(
        ModelBlob::decode(&bytes),
        Err(Error::BlobCorrupt(_))
    ));
}

/// One hand-built stump so payload offsets are known exactly:
/// node 0 = [feature 0, 0.5, left 1, right 2], nodes 1/2 = leaves 0/1.
fn stump_blob() -> ModelBlob {
    let tree = DecisionTree {
        nodes: vec![
            TreeNode {
                feature: 0,
                threshold: 0.5,
                left: 1,
                right: 2,
            },
            TreeNode {
                feature: -1,
                threshold: 0.0,
                left: 0,
                right: 0,
            },
            TreeNode {
                feature: -1,
                threshold: 1.0,
                left: 0,
                right: 0,
            },
        ],
    };
    ModelBlob {
        class_map: vec!["a".into(), "b".into()],
        feature_spec: Some(FeatureSpec::default_for_channels(1, false)),
        filter_spec: FilterSpec::default(),
        ndvi_bands: None,
        layer_ids: vec!["layer".into()],
        window_size: 3,
        model: TrainedModel::Forest(RandomForestModel {
            config: RandomForestConfig {
                n_estimators: 1,
                ..RandomForestConfig::default()
            },
            n_classes: 2,
            n_features: 1,
            trees: vec![tree],
        }),
    }
}

#[test]
fn stump_survives_round_trip_and_still_splits() {
    let blob = stump_blob();
    let back = ModelBlob::decode(&blob.encode()).unwrap();
    assert_eq!(back, blob);
    let TrainedModel::Forest(f) = &back.model else {
        panic!("expected forest");
    };
    assert_eq!(
        rf_predict(f, &[vec![0.2], vec![0.9]]).unwrap(),
        vec![0, 1]
    );
}

#[test]
fn tree_structure_is_validated_on_decode() {
    let bytes = stump_blob().encode();

    // child pointing at its own parent (index 0 <= 0)
    let b = poke_payload(&bytes, 2, 0.0);
    assert!(matches!(ModelBlob::decode(&b), Err(Error::BlobCorrupt(_))));
    // fractional child index
    let b = poke_payload(&bytes, 2, 1.5);
    assert!(matches!(ModelBlob::decode(&b), Err(Error::BlobCorrupt(_))));
    // child index past the node list
    let b = poke_payload(&bytes, 3, 99.0);
    assert!(matches!(ModelBlob::decode(&b), Err(Error::BlobCorrupt(_))));
    // split feature out of range (model has 1 feature)
    let b = poke_payload(&bytes, 0, 7.0);
    assert!(matches!(ModelBlob::decode(&b), Err(Error::BlobCorrupt(_))));
    // leaf class out of range: node 1 sits at quad 1, class at flat index 5
    let b = poke_payload(&bytes, 5, 5.0);
    assert!(matches!(ModelBlob::decode(&b), Err(Error::BlobCorrupt(_))));
    // untouched bytes still decode
    assert!(ModelBlob::decode(&bytes).is_ok());
}

#[test]
fn missing_arch_field_falls_back_to_preset() {
    // arch in the header equals the preset layout, so dropping the field must
    // decode to the identical model
    let config = FlexCnnConfig::desk(1, 2, CnnPreset::FlexCnnSmall);
    let net = FlexCnn::<f32>::init(&config, &arch_for(CnnPreset::FlexCnnSmall)).unwrap();
    let blob = ModelBlob {
        class_map: vec!["a".into(), "b".into()],
        feature_spec: None,
        filter_spec: FilterSpec::default(),
        ndvi_bands: None,
        layer_ids: vec!["layer".into()],
        window_size: 8,
        model: TrainedModel::Cnn(net),
    };
    let bytes = patch_header(&blob.encode(), |v| {
        v.as_object_mut().unwrap().remove("arch");
    });
    let back = ModelBlob::decode(&bytes).unwrap();
    assert_eq!(back, blob);
}

#[test]
fn cnn_array_bookkeeping_is_validated() {
    let (blob, _) = cnn_blob();
    let bytes = blob.encode();

    // swap two parameter names: order mismatch
    let b = patch_header(&bytes, |v| {
        let arrays = v["arrays"].as_array_mut().unwrap();
        let first = arrays[0]["name"].clone();
        arrays[0]["name"] = arrays[1]["name"].clone();
        arrays[1]["name"] = first;
    });
    assert!(matches!(ModelBlob::decode(&b), Err(Error::BlobCorrupt(_))));

    // drop one array entirely, shrinking the payload to match, so only the
    // tensor-count check can fire
    let dropped = {
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let v: Value = serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
        let arrays = v["arrays"].as_array().unwrap();
        arrays.last().unwrap()["len"].as_u64().unwrap() as usize
    };
    let b = patch_header(&bytes, |v| {
        v["arrays"].as_array_mut().unwrap().pop();
    });
    let b = b[..b.len() - dropped * 4].to_vec();
    assert!(matches!(ModelBlob::decode(&b), Err(Error::BlobCorrupt(_))));
}
