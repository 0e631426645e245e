use super::*;
use crate::features::Selector;
use proptest::prelude::*;

const DOCS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/queries");

fn read_doc(name: &str) -> String {
    std::fs::read_to_string(format!("{DOCS}/{name}")).unwrap()
}

#[test]
fn data_query_doc_parses_to_four_raster_layers() {
    let spec = parse_query(&read_doc("data_query.json")).unwrap();
    assert_eq!(spec.channel_count(), 4);
    assert_eq!(spec.layers[0], "50060");
    assert_eq!(spec.layers[3], "50063");
    assert_eq!(spec.spatial, Spatial::Points(vec![(32.78, -96.8)]));
    assert_eq!(
        spec.temporal.snapshot,
        Timestamp::parse("2018-01-29T12:00:00Z").unwrap()
    );
    assert_eq!(spec.temporal.search_window_secs, None);
    assert!(spec.model.is_none());
}

#[test]
fn train_query_doc_yields_fourteen_features() {
    let spec = parse_query(&read_doc("train_query.json")).unwrap();
    let model = spec.model.as_ref().unwrap();
    assert_eq!(model.mode, Mode::Train);
    assert_eq!(model.architecture, Architecture::RandomForest);
    assert_eq!(model.window_size, 32);
    let features = model.params.features.as_ref().unwrap();
    assert_eq!(features.len(), 14);
    assert_eq!(features.mean.len(), 5);
    assert_eq!(features.mean[4], Selector::Ndvi);
    assert_eq!(features.std.len(), 5);
    assert_eq!(features.glcm_contrast, vec![
        Selector::Band(0),
        Selector::Band(1),
        Selector::Band(2),
        Selector::Band(3),
    ]);
    // Semicolon-string coordinates and labels stay aligned.
    let points = spec.points().unwrap();
    assert_eq!(points.len(), model.labels.len());
    // The vegetation gate binds to mean NDVI.
    assert_eq!(
        model.filters.bounds,
        vec![FilterBound {
            selector: Selector::Ndvi,
            statistic: Statistic::Mean,
            min: Some(0.0),
            max: None,
        }]
    );
}

#[test]
fn test_query_doc_is_a_square_inference_request() {
    let spec = parse_query(&read_doc("test_query.json")).unwrap();
    let model = spec.model.as_ref().unwrap();
    assert_eq!(model.mode, Mode::Test);
    assert!(model.labels.is_empty());
    assert!(matches!(spec.spatial, Spatial::Square { .. }));
    // "resnet" selects the residual flexcnn preset.
    assert_eq!(
        model.architecture,
        Architecture::FlexCnn {
            preset: CnnPreset::ResnetMini
        }
    );
}

#[test]
fn empty_document_is_a_syntax_error() {
    assert!(matches!(parse_query(""), Err(Error::QuerySyntax(_))));
    assert!(matches!(parse_query("{}"), Err(Error::QuerySyntax(_))));
}

#[test]
fn unknown_fields_rejected_strict_warned_lenient() {
    let doc = r#"{
        "layers": ["a"],
        "spatial": {"type": "point", "coordinates": [1.0, 2.0]},
        "temporal": {"intervals": [{"snapshot": "2020-01-01T00:00:00Z"}]},
        "extra": true
    }"#;
    assert!(matches!(parse_query(doc), Err(Error::QuerySyntax(_))));
    let (spec, warnings) = parse_query_lenient(doc).unwrap();
    assert_eq!(spec.layers, vec!["a"]);
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].contains("extra"));
}

#[test]
fn unknown_architecture_is_its_own_error() {
    let doc = r#"{
        "layers": ["a"],
        "spatial": {"type": "point", "coordinates": [1.0, 2.0]},
        "temporal": {"intervals": [{"snapshot": "2020-01-01T00:00:00Z"}]},
        "model": {"mode": "train", "id": "m", "architecture": "svm",
                  "label": ["x"], "window_size": 8}
    }"#;
    assert!(matches!(
        parse_query(doc),
        Err(Error::UnknownArchitecture(a)) if a == "svm"
    ));
}

#[test]
fn coordinate_encodings_agree() {
    let array = r#"{
        "layers": ["a"],
        "spatial": {"type": "point", "coordinates": [[1.5, -2.25], [3.0, 4.0]]},
        "temporal": {"intervals": [{"snapshot": "2020-01-01T00:00:00Z"}]}
    }"#;
    let semicolon = r#"{
        "layers": ["a"],
        "spatial": {"type": "point", "coordinates": "1.5,-2.25;3.0,4.0"},
        "temporal": {"intervals": [{"snapshot": "2020-01-01T00:00:00Z"}]}
    }"#;
    let flat = r#"{
        "layers": ["a"],
        "spatial": {"type": "point", "coordinates": [1.5, -2.25, 3.0, 4.0]},
        "temporal": {"intervals": [{"snapshot": "2020-01-01T00:00:00Z"}]}
    }"#;
    let a = parse_query(array).unwrap();
    assert_eq!(a, parse_query(semicolon).unwrap());
    assert_eq!(a, parse_query(flat).unwrap());
}

struct FakeCtx {
    layers: Vec<String>,
    models: Vec<String>,
}

impl ValidationContext for FakeCtx {
    fn has_layer(&self, layer_id: &str) -> bool {
        self.layers.iter().any(|l| l == layer_id)
    }
    fn has_model(&self, model_id: &str) -> bool {
        self.models.iter().any(|m| m == model_id)
    }
}

fn ctx() -> FakeCtx {
    FakeCtx {
        layers: vec!["red".into(), "nir".into()],
        models: vec!["known".into()],
    }
}

fn base_train(labels: &[&str], coords: &[(f64, f64)]) -> QuerySpec {
    QuerySpec {
        layers: vec!["red".into(), "nir".into()],
        spatial: Spatial::Points(coords.to_vec()),
        temporal: Temporal {
            snapshot: Timestamp::parse("2020-01-01T00:00:00Z").unwrap(),
            search_window_secs: None,
        },
        model: Some(ModelBlock {
            mode: Mode::Train,
            id: "m".into(),
            architecture: Architecture::RandomForest,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            window_size: 8,
            filters: FilterSpec::default(),
            params: ModelParams::default(),
        }),
    }
}

#[test]
fn label_count_mismatch_is_reported() {
    let spec = base_train(&["a", "b"], &[(0.0, 0.0), (0.1, 0.1), (0.2, 0.2)]);
    let report = validate_query(&spec, &ctx());
    assert!(!report.is_ok());
    assert!(report
        .violations
        .iter()
        .any(|v| v.contains("label count mismatch")));
}

#[test]
fn unknown_model_id_in_test_mode_is_reported() {
    let mut spec = base_train(&[], &[(0.0, 0.0)]);
    let model = spec.model.as_mut().unwrap();
    model.mode = Mode::Test;
    model.id = "nope".into();
    let report = validate_query(&spec, &ctx());
    assert!(report.violations.iter().any(|v| v.contains("nope")));
}

#[test]
fn valid_train_query_yields_empty_report() {
    let spec = base_train(&["a", "b"], &[(0.0, 0.0), (0.1, 0.1)]);
    assert!(validate_query(&spec, &ctx()).is_ok());
}

#[test]
fn report_collects_every_violation() {
    // Unknown layer + label mismatch + out-of-range filter band, all at once.
    let mut spec = base_train(&["a"], &[(0.0, 0.0), (0.1, 0.1)]);
    spec.layers.push("missing".into());
    spec.model.as_mut().unwrap().filters.bounds.push(FilterBound {
        selector: Selector::Band(9),
        statistic: Statistic::Mean,
        min: Some(0.0),
        max: None,
    });
    let report = validate_query(&spec, &ctx());
    assert!(report.violations.len() >= 3, "{:?}", report.violations);
}

fn selector_strategy() -> impl Strategy<Value = Selector> {
    prop_oneof![(0usize..6).prop_map(Selector::Band), Just(Selector::Ndvi)]
}

fn spec_strategy() -> impl Strategy<Value = QuerySpec> {
    let layer = "[a-z]{1,8}";
    let label = "[a-z0-9_]{1,6}";
    let coord = (-80.0f64..80.0, -179.0f64..179.0);
    let filters = proptest::collection::btree_map(
        (selector_strategy(), prop_oneof![
            Just(Statistic::Min),
            Just(Statistic::Max),
            Just(Statistic::Mean),
            Just(Statistic::Std)
        ]),
        (
            proptest::option::of(-10.0f64..10.0),
            proptest::option::of(-10.0f64..10.0),
        ),
        0..3,
    )
    .prop_map(|m| FilterSpec {
        bounds: m
            .into_iter()
            .map(|((selector, statistic), (min, max))| FilterBound {
                selector,
                statistic,
                min,
                max,
            })
            .collect(),
    });
    let features = proptest::option::of(
        (
            proptest::collection::vec(selector_strategy(), 0..4),
            proptest::collection::vec(selector_strategy(), 0..4),
            proptest::collection::vec((0usize..6).prop_map(Selector::Band), 0..4),
            2usize..32,
        )
            .prop_map(|(mean, std, glcm_contrast, glcm_levels)| FeatureSpec {
                mean,
                std,
                glcm_contrast,
                glcm_levels,
            }),
    );
    let arch = prop_oneof![
        Just(Architecture::RandomForest),
        Just(Architecture::FlexCnn {
            preset: CnnPreset::FlexCnnSmall
        }),
        Just(Architecture::FlexCnn {
            preset: CnnPreset::ResnetMini
        }),
        Just(Architecture::FlexCnn {
            preset: CnnPreset::Resnet34
        }),
    ];
    let model = (
        prop_oneof![Just(Mode::Train), Just(Mode::Test)],
        "[a-z_]{1,12}",
        arch,
        proptest::collection::vec(label, 0..4),
        1usize..64,
        filters,
        features,
        proptest::option::of(0u64..u64::MAX / 2),
    )
        .prop_map(
            |(mode, id, architecture, labels, window_size, filters, features, seed)| ModelBlock {
                mode,
                id,
                architecture,
                labels,
                window_size,
                filters,
                params: ModelParams {
                    features,
                    seed,
                    ..ModelParams::default()
                },
            },
        );
    (
        proptest::collection::vec(layer, 1..5),
        prop_oneof![
            proptest::collection::vec(coord.clone(), 1..5).prop_map(Spatial::Points),
            (coord.clone(), coord).prop_map(|(corner1, corner2)| Spatial::Square { corner1, corner2 }),
        ],
        (0i64..4_000_000_000).prop_map(Timestamp::from_unix),
        proptest::option::of(0i64..10_000_000),
        proptest::option::of(model),
    )
        .prop_map(|(layers, spatial, snapshot, window, model)| QuerySpec {
            layers,
            spatial,
            temporal: Temporal {
                snapshot,
                search_window_secs: window,
            },
            model,
        })
}

proptest! {
    // Canonical round trip: parse(serialize(spec)) == spec.
    #[test]
    fn canonical_serialization_round_trips(spec in spec_strategy()) {
        let text = serde_json::to_string_pretty(&to_canonical_json(&spec)).unwrap();
        let reparsed = parse_query(&text).unwrap();
        prop_assert_eq!(reparsed, spec);
    }

    // Arbitrary JSON never panics the parser.
    #[test]
    fn parser_never_panics_on_arbitrary_json(doc in "\\PC{0,200}") {
        let _ = parse_query(&doc);
        let _ = parse_query_lenient(&doc);
    }

    // Structured-but-wrong documents error cleanly instead of panicking.
    #[test]
    fn parser_never_panics_on_json_shaped_noise(
        layers in prop_oneof![Just("[]"), Just("[1]"), Just("{}"), Just("[\"x\"]")],
        coords in prop_oneof![Just("[1,2]"), Just("[[1,2],[3]]"), Just("\"a;b\""), Just("[1,\"x\"]")],
        k in prop_oneof![Just("0"), Just("-3"), Just("\"big\""), Just("3.5")],
    ) {
        let doc = format!(
            r#"{{"layers": {layers},
                "spatial": {{"type": "point", "coordinates": {coords}}},
                "temporal": {{"intervals": [{{"snapshot": "2020-01-01T00:00:00Z"}}]}},
                "model": {{"mode": "train", "id": "m", "architecture": "random_forest",
                           "label": ["a"], "window_size": {k}}}}}"#
        );
        let _ = parse_query(&doc);
    }
}

// Round trip of the semicolon wire shape: parse → canonical → parse is stable.
#[test]
fn semicolon_form_canonicalizes_to_array_form() {
    let spec = parse_query(&read_doc("train_query.json")).unwrap();
    let canonical = to_canonical_json(&spec);
    let coords = &canonical["spatial"]["coordinates"];
    assert!(coords.is_array());
    assert!(coords[0].is_array(), "canonical form is the array of pairs");
    let reparsed = parse_query(&serde_json::to_string(&canonical).unwrap()).unwrap();
    assert_eq!(reparsed, spec);
}
