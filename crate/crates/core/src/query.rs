//! Train/test query documents: the system's sole user input.
//!
//! Parsing is strict by default (unknown fields are errors); a lenient mode
//! downgrades unknown fields to warnings. Coordinates are accepted both as an
//! array of `[lat, lon]` pairs and as the flat semicolon string form
//! (`"lat1,lon1;lat2,lon2"`); the array is canonical.

use crate::error::{Error, Result};
use crate::features::{FeatureSpec, Selector};
use crate::timestamp::{Timestamp, SECONDS_PER_DAY};
use serde_json::{json, Map, Value};

/// Default temporal search window when the query omits one (configurable at
/// the service level; not a dataset-derived constant).
pub const DEFAULT_SEARCH_WINDOW_SECS: i64 = 30 * SECONDS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CnnPreset {
    #[serde(rename = "flexcnn-small")]
    FlexCnnSmall,
    #[serde(rename = "resnet-mini")]
    ResnetMini,
    #[serde(rename = "resnet34")]
    Resnet34,
}

impl CnnPreset {
    pub fn name(&self) -> &'static str {
        match self {
            CnnPreset::FlexCnnSmall => "flexcnn-small",
            CnnPreset::ResnetMini => "resnet-mini",
            CnnPreset::Resnet34 => "resnet34",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    RandomForest,
    FlexCnn { preset: CnnPreset },
}

impl Architecture {
    pub fn canonical_name(&self) -> &'static str {
        match self {
            Architecture::RandomForest => "random_forest",
            Architecture::FlexCnn { .. } => "flexcnn",
        }
    }
}

/// Spatial span: a list of labeled-point coordinates or a two-corner box.
#[derive(Debug, Clone, PartialEq)]
pub enum Spatial {
    /// (lat, lon) pairs.
    Points(Vec<(f64, f64)>),
    Square {
        corner1: (f64, f64),
        corner2: (f64, f64),
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temporal {
    pub snapshot: Timestamp,
    /// Absent means "use the service default".
    pub search_window_secs: Option<i64>,
}

impl Temporal {
    pub fn window_or_default(&self) -> i64 {
        self.search_window_secs.unwrap_or(DEFAULT_SEARCH_WINDOW_SECS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Statistic {
    Min,
    Max,
    Mean,
    Std,
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::Min => "min",
            Statistic::Max => "max",
            Statistic::Mean => "mean",
            Statistic::Std => "std",
        }
    }
}

/// One per-statistic bound, e.g. "mean NDVI must be >= 0".
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBound {
    pub selector: Selector,
    pub statistic: Statistic,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

/// Quality-filter bounds; a sample is retained iff every bound holds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterSpec {
    pub bounds: Vec<FilterBound>,
}

impl FilterSpec {
    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }
}

/// Per-class holdout sizes for the stratified split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HoldoutSpec {
    pub validation: usize,
    pub test: usize,
}

/// Random-forest grid-search extents.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchSpec {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
}

/// Architecture parameters. All optional; absent fields take documented
/// defaults. The CNN preset is not stored here: it is absorbed into
/// `Architecture` at parse time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub features: Option<FeatureSpec>,
    pub grid: Option<GridSearchSpec>,
    pub holdout: Option<HoldoutSpec>,
    /// Override for NDVI band resolution: (red layer index, nir layer index).
    pub ndvi_bands: Option<(usize, usize)>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_step_epochs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub mode: Mode,
    pub id: String,
    pub architecture: Architecture,
    /// Train mode only; one label per coordinate.
    pub labels: Vec<String>,
    pub window_size: usize,
    pub filters: FilterSpec,
    pub params: ModelParams,
}

/// A parsed query document.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    /// Ordered layer ids; the patch channel order.
    pub layers: Vec<String>,
    pub spatial: Spatial,
    pub temporal: Temporal,
    /// Data-only queries (no model block) parse but cannot train or infer.
    pub model: Option<ModelBlock>,
}

impl QuerySpec {
    pub fn channel_count(&self) -> usize {
        self.layers.len()
    }

    pub fn points(&self) -> Option<&[(f64, f64)]> {
        match &self.spatial {
            Spatial::Points(p) => Some(p),
            Spatial::Square { .. } => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Parser {
    lenient: bool,
    warnings: Vec<String>,
}

fn syntax(msg: impl Into<String>) -> Error {
    Error::QuerySyntax(msg.into())
}

fn type_err(field: &str, msg: impl Into<String>) -> Error {
    Error::QueryType {
        field: field.to_string(),
        message: msg.into(),
    }
}

impl Parser {
    fn check_known(&mut self, obj: &Map<String, Value>, known: &[&str], ctx: &str) -> Result<()> {
        for key in obj.keys() {
            if !known.contains(&key.as_str()) {
                let msg = format!("unknown field {key:?} in {ctx}");
                if self.lenient {
                    self.warnings.push(msg);
                } else {
                    return Err(syntax(msg));
                }
            }
        }
        Ok(())
    }

    fn as_object<'a>(&self, v: &'a Value, field: &str) -> Result<&'a Map<String, Value>> {
        v.as_object()
            .ok_or_else(|| type_err(field, "expected an object"))
    }

    fn as_f64(&self, v: &Value, field: &str) -> Result<f64> {
        v.as_f64()
            .ok_or_else(|| type_err(field, format!("expected a number, got {v}")))
    }

    fn as_usize(&self, v: &Value, field: &str) -> Result<usize> {
        v.as_u64()
            .map(|u| u as usize)
            .ok_or_else(|| type_err(field, format!("expected a non-negative integer, got {v}")))
    }

    fn as_str<'a>(&self, v: &'a Value, field: &str) -> Result<&'a str> {
        v.as_str()
            .ok_or_else(|| type_err(field, format!("expected a string, got {v}")))
    }

    fn parse(&mut self, root: &Value) -> Result<QuerySpec> {
        let obj = self.as_object(root, "query")?;
        self.check_known(obj, &["layers", "spatial", "temporal", "model"], "query")?;

        let layers = self.parse_layers(
            obj.get("layers")
                .ok_or_else(|| syntax("missing \"layers\""))?,
        )?;
        let spatial = self.parse_spatial(
            obj.get("spatial")
                .ok_or_else(|| syntax("missing \"spatial\""))?,
        )?;
        let temporal = self.parse_temporal(
            obj.get("temporal")
                .ok_or_else(|| syntax("missing \"temporal\""))?,
        )?;
        let model = match obj.get("model") {
            Some(m) => Some(self.parse_model(m)?),
            None => None,
        };

        Ok(QuerySpec {
            layers,
            spatial,
            temporal,
            model,
        })
    }

    fn parse_layers(&mut self, v: &Value) -> Result<Vec<String>> {
        let arr = v
            .as_array()
            .ok_or_else(|| type_err("layers", "expected an array"))?;
        let mut layers = Vec::with_capacity(arr.len());
        for item in arr {
            match item {
                Value::String(id) => layers.push(id.clone()),
                Value::Object(o) => {
                    self.check_known(o, &["type", "id"], "layers[]")?;
                    if let Some(t) = o.get("type") {
                        let t = self.as_str(t, "layers[].type")?;
                        if t != "raster" {
                            return Err(type_err(
                                "layers[].type",
                                format!("only \"raster\" layers are supported, got {t:?}"),
                            ));
                        }
                    }
                    let id = o.get("id").ok_or_else(|| syntax("layer missing \"id\""))?;
                    match id {
                        Value::String(s) => layers.push(s.clone()),
                        Value::Number(n) => layers.push(n.to_string()),
                        _ => return Err(type_err("layers[].id", "expected a string or number")),
                    }
                }
                _ => return Err(type_err("layers[]", "expected an object or string")),
            }
        }
        Ok(layers)
    }

    fn parse_coordinate_pairs(&self, v: &Value, field: &str) -> Result<Vec<(f64, f64)>> {
        match v {
            // "lat1,lon1;lat2,lon2" (flat semicolon form)
            Value::String(s) => {
                let mut out = Vec::new();
                for (i, pair) in s.split(';').enumerate() {
                    let pair = pair.trim();
                    if pair.is_empty() {
                        continue;
                    }
                    let parts: Vec<&str> = pair.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err(type_err(
                            field,
                            format!("pair {i} is not \"lat,lon\": {pair:?}"),
                        ));
                    }
                    let lat: f64 = parts[0]
                        .parse()
                        .map_err(|_| type_err(field, format!("bad latitude {:?}", parts[0])))?;
                    let lon: f64 = parts[1]
                        .parse()
                        .map_err(|_| type_err(field, format!("bad longitude {:?}", parts[1])))?;
                    out.push((lat, lon));
                }
                Ok(out)
            }
            Value::Array(arr) => {
                // Either [[lat,lon],...] or a flat [lat,lon,...] list.
                if arr.iter().all(|e| e.is_array()) {
                    let mut out = Vec::with_capacity(arr.len());
                    for (i, e) in arr.iter().enumerate() {
                        let pair = e.as_array().unwrap();
                        if pair.len() != 2 {
                            return Err(type_err(
                                field,
                                format!("coordinate {i} must be [lat, lon]"),
                            ));
                        }
                        out.push((
                            self.as_f64(&pair[0], field)?,
                            self.as_f64(&pair[1], field)?,
                        ));
                    }
                    Ok(out)
                } else {
                    let nums: Vec<f64> = arr
                        .iter()
                        .map(|e| self.as_f64(e, field))
                        .collect::<Result<_>>()?;
                    if nums.len() % 2 != 0 {
                        return Err(type_err(field, "flat coordinate list has odd length"));
                    }
                    Ok(nums.chunks(2).map(|c| (c[0], c[1])).collect())
                }
            }
            _ => Err(type_err(field, "expected an array or string")),
        }
    }

    fn parse_spatial(&mut self, v: &Value) -> Result<Spatial> {
        let obj = self.as_object(v, "spatial")?;
        self.check_known(obj, &["type", "coordinates"], "spatial")?;
        let kind = self.as_str(
            obj.get("type")
                .ok_or_else(|| syntax("spatial missing \"type\""))?,
            "spatial.type",
        )?;
        let coords = obj
            .get("coordinates")
            .ok_or_else(|| syntax("spatial missing \"coordinates\""))?;
        match kind {
            "point" => Ok(Spatial::Points(
                self.parse_coordinate_pairs(coords, "spatial.coordinates")?,
            )),
            "square" => {
                let pairs = self.parse_coordinate_pairs(coords, "spatial.coordinates")?;
                if pairs.len() != 2 {
                    return Err(type_err(
                        "spatial.coordinates",
                        format!("square needs exactly 2 corners, got {}", pairs.len()),
                    ));
                }
                Ok(Spatial::Square {
                    corner1: pairs[0],
                    corner2: pairs[1],
                })
            }
            other => Err(type_err(
                "spatial.type",
                format!("expected \"point\" or \"square\", got {other:?}"),
            )),
        }
    }

    fn parse_temporal(&mut self, v: &Value) -> Result<Temporal> {
        let obj = self.as_object(v, "temporal")?;
        self.check_known(obj, &["intervals"], "temporal")?;
        let intervals = obj
            .get("intervals")
            .ok_or_else(|| syntax("temporal missing \"intervals\""))?
            .as_array()
            .ok_or_else(|| type_err("temporal.intervals", "expected an array"))?;
        if intervals.len() != 1 {
            return Err(type_err(
                "temporal.intervals",
                format!("exactly one interval supported, got {}", intervals.len()),
            ));
        }
        let interval = self.as_object(&intervals[0], "temporal.intervals[0]")?;
        self.check_known(
            interval,
            &["snapshot", "search_window_days"],
            "temporal.intervals[0]",
        )?;
        let snapshot = Timestamp::parse(self.as_str(
            interval
                .get("snapshot")
                .ok_or_else(|| syntax("interval missing \"snapshot\""))?,
            "temporal.intervals[0].snapshot",
        )?)?;
        let search_window_secs = match interval.get("search_window_days") {
            Some(d) => {
                let days = self.as_f64(d, "search_window_days")?;
                if days < 0.0 || !days.is_finite() {
                    return Err(type_err(
                        "search_window_days",
                        "must be a non-negative finite number",
                    ));
                }
                Some((days * SECONDS_PER_DAY as f64).round() as i64)
            }
            None => None,
        };
        Ok(Temporal {
            snapshot,
            search_window_secs,
        })
    }

    fn parse_labels(&self, v: &Value) -> Result<Vec<String>> {
        match v {
            Value::String(s) => Ok(s
                .split(';')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect()),
            Value::Array(arr) => arr
                .iter()
                .map(|e| match e {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(type_err("model.label", "labels must be strings or numbers")),
                })
                .collect(),
            _ => Err(type_err("model.label", "expected an array or string")),
        }
    }

    fn parse_architecture(&self, v: &Value, preset: Option<CnnPreset>) -> Result<Architecture> {
        let name = self.as_str(v, "model.architecture")?;
        match name {
            "random_forest" => Ok(Architecture::RandomForest),
            // The listing name "resnet" selects the residual preset.
            "resnet" => Ok(Architecture::FlexCnn {
                preset: preset.unwrap_or(CnnPreset::ResnetMini),
            }),
            "flexcnn" => Ok(Architecture::FlexCnn {
                preset: preset.unwrap_or(CnnPreset::FlexCnnSmall),
            }),
            other => Err(Error::UnknownArchitecture(other.to_string())),
        }
    }

    fn parse_selector(&self, v: &Value, field: &str) -> Result<Selector> {
        match v {
            Value::Number(n) => {
                let idx = n
                    .as_u64()
                    .ok_or_else(|| type_err(field, "band index must be a non-negative integer"))?;
                Ok(Selector::Band(idx as usize))
            }
            Value::String(s) if s == "ndvi" => Ok(Selector::Ndvi),
            Value::String(s) => {
                if let Ok(idx) = s.parse::<usize>() {
                    Ok(Selector::Band(idx))
                } else {
                    Err(type_err(
                        field,
                        format!("unknown selector {s:?} (band index or \"ndvi\")"),
                    ))
                }
            }
            _ => Err(type_err(field, "expected a band index or \"ndvi\"")),
        }
    }

    fn parse_selector_list(&self, v: &Value, field: &str) -> Result<Vec<Selector>> {
        v.as_array()
            .ok_or_else(|| type_err(field, "expected an array of selectors"))?
            .iter()
            .map(|e| self.parse_selector(e, field))
            .collect()
    }

    fn parse_features(&mut self, v: &Value) -> Result<FeatureSpec> {
        let obj = self.as_object(v, "model.params.features")?;
        self.check_known(
            obj,
            &["mean", "std", "glcm:contrast", "glcm_levels"],
            "model.params.features",
        )?;
        let mut spec = FeatureSpec::default();
        if let Some(m) = obj.get("mean") {
            spec.mean = self.parse_selector_list(m, "features.mean")?;
        }
        if let Some(s) = obj.get("std") {
            spec.std = self.parse_selector_list(s, "features.std")?;
        }
        if let Some(g) = obj.get("glcm:contrast") {
            spec.glcm_contrast = self.parse_selector_list(g, "features.glcm:contrast")?;
        }
        if let Some(l) = obj.get("glcm_levels") {
            spec.glcm_levels = self.as_usize(l, "features.glcm_levels")?;
        }
        Ok(spec)
    }

    fn parse_filters(&mut self, v: &Value) -> Result<FilterSpec> {
        let obj = self.as_object(v, "model.filters")?;
        let mut bounds = Vec::new();
        for (key, val) in obj {
            // Key grammar: SELECTOR or SELECTOR.STATISTIC; bare selector = mean.
            let (sel_text, statistic) = match key.rsplit_once('.') {
                Some((sel, stat)) => {
                    let statistic = match stat {
                        "min" => Statistic::Min,
                        "max" => Statistic::Max,
                        "mean" => Statistic::Mean,
                        "std" => Statistic::Std,
                        other => {
                            return Err(type_err(
                                "model.filters",
                                format!("unknown statistic {other:?} in filter key {key:?}"),
                            ))
                        }
                    };
                    (sel, statistic)
                }
                None => (key.as_str(), Statistic::Mean),
            };
            let selector = self.parse_selector(&Value::String(sel_text.to_string()), "filters")?;
            let bobj = self.as_object(val, &format!("filters.{key}"))?;
            self.check_known(bobj, &["min", "max"], &format!("filters.{key}"))?;
            let min = bobj
                .get("min")
                .map(|m| self.as_f64(m, "filters.min"))
                .transpose()?;
            let max = bobj
                .get("max")
                .map(|m| self.as_f64(m, "filters.max"))
                .transpose()?;
            bounds.push(FilterBound {
                selector,
                statistic,
                min,
                max,
            });
        }
        // Canonical order: by selector then statistic, so parse/serialize
        // round-trips independent of document key order.
        bounds.sort_by_key(|b| (b.selector, b.statistic));
        Ok(FilterSpec { bounds })
    }

    fn parse_params(&mut self, v: &Value) -> Result<(ModelParams, Option<CnnPreset>)> {
        let obj = self.as_object(v, "model.params")?;
        self.check_known(
            obj,
            &[
                "features",
                "grid",
                "holdout",
                "ndvi_bands",
                "preset",
                "epochs",
                "batch_size",
                "lr_step_epochs",
                "seed",
            ],
            "model.params",
        )?;
        let mut params = ModelParams::default();
        if let Some(f) = obj.get("features") {
            params.features = Some(self.parse_features(f)?);
        }
        if let Some(g) = obj.get("grid") {
            let gobj = self.as_object(g, "model.params.grid")?;
            self.check_known(gobj, &["n_estimators", "max_depth"], "model.params.grid")?;
            let list = |key: &str| -> Result<Vec<usize>> {
                gobj.get(key)
                    .ok_or_else(|| syntax(format!("grid missing {key:?}")))?
                    .as_array()
                    .ok_or_else(|| type_err(key, "expected an array"))?
                    .iter()
                    .map(|e| self.as_usize(e, key))
                    .collect()
            };
            params.grid = Some(GridSearchSpec {
                n_estimators: list("n_estimators")?,
                max_depth: list("max_depth")?,
            });
        }
        if let Some(h) = obj.get("holdout") {
            let hobj = self.as_object(h, "model.params.holdout")?;
            self.check_known(hobj, &["validation", "test"], "model.params.holdout")?;
            params.holdout = Some(HoldoutSpec {
                validation: self.as_usize(
                    hobj.get("validation")
                        .ok_or_else(|| syntax("holdout missing \"validation\""))?,
                    "holdout.validation",
                )?,
                test: self.as_usize(
                    hobj.get("test")
                        .ok_or_else(|| syntax("holdout missing \"test\""))?,
                    "holdout.test",
                )?,
            });
        }
        if let Some(n) = obj.get("ndvi_bands") {
            let nobj = self.as_object(n, "model.params.ndvi_bands")?;
            self.check_known(nobj, &["red", "nir"], "model.params.ndvi_bands")?;
            params.ndvi_bands = Some((
                self.as_usize(
                    nobj.get("red")
                        .ok_or_else(|| syntax("ndvi_bands missing \"red\""))?,
                    "ndvi_bands.red",
                )?,
                self.as_usize(
                    nobj.get("nir")
                        .ok_or_else(|| syntax("ndvi_bands missing \"nir\""))?,
                    "ndvi_bands.nir",
                )?,
            ));
        }
        let mut preset = None;
        if let Some(p) = obj.get("preset") {
            let name = self.as_str(p, "model.params.preset")?;
            preset = Some(match name {
                "flexcnn-small" => CnnPreset::FlexCnnSmall,
                "resnet-mini" => CnnPreset::ResnetMini,
                "resnet34" => CnnPreset::Resnet34,
                other => {
                    return Err(type_err(
                        "model.params.preset",
                        format!("unknown preset {other:?}"),
                    ))
                }
            });
        }
        if let Some(e) = obj.get("epochs") {
            params.epochs = Some(self.as_usize(e, "model.params.epochs")?);
        }
        if let Some(b) = obj.get("batch_size") {
            params.batch_size = Some(self.as_usize(b, "model.params.batch_size")?);
        }
        if let Some(s) = obj.get("lr_step_epochs") {
            params.lr_step_epochs = Some(self.as_usize(s, "model.params.lr_step_epochs")?);
        }
        if let Some(s) = obj.get("seed") {
            params.seed = Some(
                s.as_u64()
                    .ok_or_else(|| type_err("model.params.seed", "expected an unsigned integer"))?,
            );
        }
        Ok((params, preset))
    }

    fn parse_model(&mut self, v: &Value) -> Result<ModelBlock> {
        let obj = self.as_object(v, "model")?;
        self.check_known(
            obj,
            &[
                "mode",
                "id",
                "architecture",
                "label",
                "window_size",
                "filters",
                "params",
            ],
            "model",
        )?;
        let mode = match self.as_str(
            obj.get("mode").ok_or_else(|| syntax("model missing \"mode\""))?,
            "model.mode",
        )? {
            "train" => Mode::Train,
            "test" => Mode::Test,
            other => {
                return Err(type_err(
                    "model.mode",
                    format!("expected \"train\" or \"test\", got {other:?}"),
                ))
            }
        };
        let id = self
            .as_str(
                obj.get("id").ok_or_else(|| syntax("model missing \"id\""))?,
                "model.id",
            )?
            .to_string();
        let (params, preset) = match obj.get("params") {
            Some(p) => self.parse_params(p)?,
            None => (ModelParams::default(), None),
        };
        let architecture = self.parse_architecture(
            obj.get("architecture")
                .ok_or_else(|| syntax("model missing \"architecture\""))?,
            preset,
        )?;
        let labels = match obj.get("label") {
            Some(l) => self.parse_labels(l)?,
            None => Vec::new(),
        };
        let window_size = self.as_usize(
            obj.get("window_size")
                .ok_or_else(|| syntax("model missing \"window_size\""))?,
            "model.window_size",
        )?;
        let filters = match obj.get("filters") {
            Some(f) => self.parse_filters(f)?,
            None => FilterSpec::default(),
        };
        Ok(ModelBlock {
            mode,
            id,
            architecture,
            labels,
            window_size,
            filters,
            params,
        })
    }
}

/// Strict parse: unknown fields are errors.
pub fn parse_query(text: &str) -> Result<QuerySpec> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| syntax(format!("not valid JSON: {e}")))?;
    let mut p = Parser {
        lenient: false,
        warnings: Vec::new(),
    };
    p.parse(&root)
}

/// Lenient parse: unknown fields come back as warnings instead of errors.
pub fn parse_query_lenient(text: &str) -> Result<(QuerySpec, Vec<String>)> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| syntax(format!("not valid JSON: {e}")))?;
    let mut p = Parser {
        lenient: true,
        warnings: Vec::new(),
    };
    let spec = p.parse(&root)?;
    Ok((spec, p.warnings))
}

// ---------------------------------------------------------------------------
// Canonical serialization
// ---------------------------------------------------------------------------

fn selector_json(s: &Selector) -> Value {
    match s {
        Selector::Band(i) => json!(i),
        Selector::Ndvi => json!("ndvi"),
    }
}

/// Canonical JSON form: array-of-pairs coordinates, explicit layer objects,
/// sorted filter keys. `parse_query(serialize(spec)) == spec`.
pub fn to_canonical_json(spec: &QuerySpec) -> Value {
    let layers: Vec<Value> = spec
        .layers
        .iter()
        .map(|id| json!({"type": "raster", "id": id}))
        .collect();
    let spatial = match &spec.spatial {
        Spatial::Points(points) => {
            let coords: Vec<Value> = points.iter().map(|(la, lo)| json!([la, lo])).collect();
            json!({"type": "point", "coordinates": coords})
        }
        Spatial::Square { corner1, corner2 } => json!({
            "type": "square",
            "coordinates": [[corner1.0, corner1.1], [corner2.0, corner2.1]],
        }),
    };
    let mut interval = Map::new();
    interval.insert("snapshot".into(), json!(spec.temporal.snapshot.to_rfc3339()));
    if let Some(secs) = spec.temporal.search_window_secs {
        interval.insert(
            "search_window_days".into(),
            json!(secs as f64 / SECONDS_PER_DAY as f64),
        );
    }
    let mut root = Map::new();
    root.insert("layers".into(), Value::Array(layers));
    root.insert("spatial".into(), spatial);
    root.insert("temporal".into(), json!({ "intervals": [interval] }));
    if let Some(model) = &spec.model {
        root.insert("model".into(), model_json(model));
    }
    Value::Object(root)
}

fn model_json(model: &ModelBlock) -> Value {
    let mut m = Map::new();
    m.insert(
        "mode".into(),
        json!(match model.mode {
            Mode::Train => "train",
            Mode::Test => "test",
        }),
    );
    m.insert("id".into(), json!(model.id));
    m.insert("architecture".into(), json!(model.architecture.canonical_name()));
    if !model.labels.is_empty() {
        m.insert("label".into(), json!(model.labels));
    }
    m.insert("window_size".into(), json!(model.window_size));
    if !model.filters.is_empty() {
        m.insert("filters".into(), filters_json(&model.filters));
    }
    let params = params_json(model);
    if !params.as_object().unwrap().is_empty() {
        m.insert("params".into(), params);
    }
    Value::Object(m)
}

fn filters_json(filters: &FilterSpec) -> Value {
    let mut obj = Map::new();
    for b in &filters.bounds {
        let sel = match &b.selector {
            Selector::Band(i) => i.to_string(),
            Selector::Ndvi => "ndvi".to_string(),
        };
        let key = match b.statistic {
            Statistic::Mean => sel,
            other => format!("{sel}.{}", other.name()),
        };
        let mut bound = Map::new();
        if let Some(min) = b.min {
            bound.insert("min".into(), json!(min));
        }
        if let Some(max) = b.max {
            bound.insert("max".into(), json!(max));
        }
        obj.insert(key, Value::Object(bound));
    }
    Value::Object(obj)
}

fn features_json(f: &FeatureSpec) -> Value {
    let mut fo = Map::new();
    if !f.mean.is_empty() {
        fo.insert(
            "mean".into(),
            Value::Array(f.mean.iter().map(selector_json).collect()),
        );
    }
    if !f.std.is_empty() {
        fo.insert(
            "std".into(),
            Value::Array(f.std.iter().map(selector_json).collect()),
        );
    }
    if !f.glcm_contrast.is_empty() {
        fo.insert(
            "glcm:contrast".into(),
            Value::Array(f.glcm_contrast.iter().map(selector_json).collect()),
        );
    }
    fo.insert("glcm_levels".into(), json!(f.glcm_levels));
    Value::Object(fo)
}

fn params_json(model: &ModelBlock) -> Value {
    let p = &model.params;
    let mut obj = Map::new();
    if let Some(f) = &p.features {
        obj.insert("features".into(), features_json(f));
    }
    if let Some(g) = &p.grid {
        obj.insert(
            "grid".into(),
            json!({"n_estimators": g.n_estimators, "max_depth": g.max_depth}),
        );
    }
    if let Some(h) = &p.holdout {
        obj.insert(
            "holdout".into(),
            json!({"validation": h.validation, "test": h.test}),
        );
    }
    if let Some((red, nir)) = p.ndvi_bands {
        obj.insert("ndvi_bands".into(), json!({"red": red, "nir": nir}));
    }
    if let Architecture::FlexCnn { preset } = model.architecture {
        obj.insert("preset".into(), json!(preset.name()));
    }
    if let Some(e) = p.epochs {
        obj.insert("epochs".into(), json!(e));
    }
    if let Some(b) = p.batch_size {
        obj.insert("batch_size".into(), json!(b));
    }
    if let Some(s) = p.lr_step_epochs {
        obj.insert("lr_step_epochs".into(), json!(s));
    }
    if let Some(s) = p.seed {
        obj.insert("seed".into(), json!(s));
    }
    Value::Object(obj)
}

fn strict_parser() -> Parser {
    Parser {
        lenient: false,
        warnings: Vec::new(),
    }
}

/// Canonical JSON object form of a filter spec (sorted keys, "SELECTOR" or
/// "SELECTOR.STATISTIC"). Inverse of [`filter_spec_from_json`].
pub fn filter_spec_to_json(filters: &FilterSpec) -> Value {
    filters_json(filters)
}

pub fn filter_spec_from_json(v: &Value) -> Result<FilterSpec> {
    strict_parser().parse_filters(v)
}

/// Canonical JSON object form of a feature spec. Inverse of
/// [`feature_spec_from_json`].
pub fn feature_spec_to_json(f: &FeatureSpec) -> Value {
    features_json(f)
}

pub fn feature_spec_from_json(v: &Value) -> Result<FeatureSpec> {
    strict_parser().parse_features(v)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Everything `validate_query` needs to know about the environment.
pub trait ValidationContext {
    fn has_layer(&self, layer_id: &str) -> bool;
    fn has_model(&self, model_id: &str) -> bool;
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }
}

/// Check a parsed query against the store/registry. Collects every violation
/// rather than stopping at the first.
pub fn validate_query(spec: &QuerySpec, ctx: &dyn ValidationContext) -> ValidationReport {
    let mut report = ValidationReport::default();

    if spec.layers.is_empty() {
        report.push("query must request at least one layer");
    }
    for id in &spec.layers {
        if !ctx.has_layer(id) {
            report.push(format!("unknown layer {id:?}"));
        }
    }

    match &spec.spatial {
        Spatial::Points(points) => {
            if points.is_empty() {
                report.push("point query has no coordinates");
            }
        }
        Spatial::Square { corner1, corner2 } => {
            if corner1 == corner2 {
                report.push("square corners must be distinct");
            }
        }
    }

    let model = match &spec.model {
        Some(m) => m,
        None => return report,
    };

    if model.window_size < 1 {
        report.push("window_size must be at least 1");
    }

    match model.mode {
        Mode::Train => {
            match &spec.spatial {
                Spatial::Points(points) => {
                    if model.labels.len() != points.len() {
                        report.push(format!(
                            "label count mismatch: {} labels for {} coordinates",
                            model.labels.len(),
                            points.len()
                        ));
                    }
                    if model.labels.is_empty() {
                        report.push("train mode requires at least one label");
                    }
                }
                Spatial::Square { .. } => {
                    report.push("train mode requires point coordinates, not a square");
                }
            }
            if ctx.has_model(&model.id) {
                // Existence is not itself a violation; overwrite policy is
                // enforced at execution time.
            }
        }
        Mode::Test => {
            if !model.labels.is_empty() {
                report.push("test mode must not carry labels");
            }
            if !ctx.has_model(&model.id) {
                report.push(format!("unknown model id {:?}", model.id));
            }
        }
    }

    let c = spec.layers.len();
    if let Some(features) = &model.params.features {
        if features.glcm_levels < 2 {
            report.push("glcm_levels must be at least 2");
        }
        for sel in features
            .mean
            .iter()
            .chain(&features.std)
            .chain(&features.glcm_contrast)
        {
            if let Selector::Band(i) = sel {
                if *i >= c {
                    report.push(format!("feature selector band {i} out of range (c={c})"));
                }
            }
        }
        for sel in &features.glcm_contrast {
            if *sel == Selector::Ndvi {
                report.push("glcm:contrast is defined on quantized bands, not \"ndvi\"");
            }
        }
    }
    for bound in &model.filters.bounds {
        if let Selector::Band(i) = bound.selector {
            if i >= c {
                report.push(format!("filter selector band {i} out of range (c={c})"));
            }
        }
        if let (Some(min), Some(max)) = (bound.min, bound.max) {
            if min > max {
                report.push(format!(
                    "filter bound min {min} exceeds max {max} for {:?}",
                    bound.selector
                ));
            }
        }
        for v in [bound.min, bound.max].into_iter().flatten() {
            if !v.is_finite() {
                report.push("filter bounds must be finite".to_string());
            }
        }
    }
    if let Some((red, nir)) = model.params.ndvi_bands {
        if red >= c || nir >= c {
            report.push(format!(
                "ndvi_bands ({red}, {nir}) out of range for c={c}"
            ));
        }
    }
    if let Some(h) = &model.params.holdout {
        if h.validation == 0 || h.test == 0 {
            report.push("holdout sizes must be positive");
        }
    }
    if let Some(g) = &model.params.grid {
        if g.n_estimators.is_empty() || g.max_depth.is_empty() {
            report.push("grid search lists must be non-empty");
        }
        if g.n_estimators.iter().any(|&n| n == 0) || g.max_depth.iter().any(|&d| d == 0) {
            report.push("grid search values must be positive");
        }
    }

    report
}

#[cfg(test)]
mod tests;
