//! Self-contained serialized model: one binary blob carries everything
//! inference needs (weights, class names, feature and filter definitions,
//! source layers, window size), so a model file can be moved between hosts
//! and still classify identically.
//!
//! Wire layout: 4-byte magic "AGMB", u32 LE format version, u32 LE header
//! length, a JSON header, then all parameter arrays as little-endian f32 in
//! the order the header declares.

use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::models::cnn::{arch_for, ArchSpec, FlexCnn, FlexCnnConfig};
use crate::models::rf::{DecisionTree, RandomForestConfig, RandomForestModel, TreeNode};
use crate::query::{
    feature_spec_from_json, feature_spec_to_json, filter_spec_from_json, filter_spec_to_json,
    FilterSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const BLOB_FORMAT_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"AGMB";

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Forest(RandomForestModel),
    Cnn(FlexCnn<f32>),
}

impl TrainedModel {
    pub fn architecture_name(&self) -> &'static str {
        match self {
            TrainedModel::Forest(_) => "random_forest",
            TrainedModel::Cnn(_) => "flexcnn",
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            TrainedModel::Forest(m) => m.n_classes,
            TrainedModel::Cnn(m) => m.config.classes,
        }
    }
}

/// A trained model plus every input definition required to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlob {
    /// class index -> label string
    pub class_map: Vec<String>,
    /// How the forest's feature vectors are built (None for the CNN, which
    /// consumes raw patches).
    pub feature_spec: Option<FeatureSpec>,
    /// Quality bounds frozen at training time and re-applied at inference.
    pub filter_spec: FilterSpec,
    /// (red, nir) band indices when an NDVI role was bound.
    pub ndvi_bands: Option<(usize, usize)>,
    pub layer_ids: Vec<String>,
    pub window_size: usize,
    pub model: TrainedModel,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: String,
    config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arch: Option<ArchSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_features: Option<usize>,
    class_map: Vec<String>,
    feature_spec: Option<Value>,
    filter_spec: Value,
    ndvi_bands: Option<(usize, usize)>,
    layer_ids: Vec<String>,
    window_size: usize,
    arrays: Vec<ArrayEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::BlobCorrupt(msg.into())
}

fn tree_to_array(tree: &DecisionTree) -> Vec<f32> {
    let mut out = Vec::with_capacity(tree.nodes.len() * 4);
    for n in &tree.nodes {
        debug_assert!(n.left < (1 << 24) && n.right < (1 << 24));
        out.push(n.feature as f32);
        out.push(n.threshold);
        out.push(n.left as f32);
        out.push(n.right as f32);
    }
    out
}

fn tree_from_array(
    data: &[f32],
    n_features: usize,
    n_classes: usize,
    tree_idx: usize,
) -> Result<DecisionTree> {
    if data.is_empty() || data.len() % 4 != 0 {
        return Err(corrupt(format!(
            "tree {tree_idx}: array of {} values is not a node list",
            data.len()
        )));
    }
    let count = data.len() / 4;
    let mut nodes = Vec::with_capacity(count);
    for (i, quad) in data.chunks_exact(4).enumerate() {
        let feature = quad[0];
        if feature.fract() != 0.0 || feature < -1.0 {
            return Err(corrupt(format!("tree {tree_idx} node {i}: bad feature tag")));
        }
        let feature = feature as i32;
        if feature < 0 {
            let class = quad[1];
            if class.fract() != 0.0 || class < 0.0 || (class as usize) >= n_classes {
                return Err(corrupt(format!(
                    "tree {tree_idx} node {i}: leaf class out of range"
                )));
            }
            nodes.push(TreeNode {
                feature: -1,
                threshold: class,
                left: 0,
                right: 0,
            });
            continue;
        }
        if feature as usize >= n_features {
            return Err(corrupt(format!(
                "tree {tree_idx} node {i}: feature index out of range"
            )));
        }
        let (left, right) = (quad[2], quad[3]);
        for child in [left, right] {
            // children always sit after their parent, which rules out cycles
            if child.fract() != 0.0 || child <= i as f32 || child as usize >= count {
                return Err(corrupt(format!(
                    "tree {tree_idx} node {i}: bad child index"
                )));
            }
        }
        nodes.push(TreeNode {
            feature,
            threshold: quad[1],
            left: left as u32,
            right: right as u32,
        });
    }
    Ok(DecisionTree { nodes })
}

impl ModelBlob {
    pub fn architecture_name(&self) -> &'static str {
        self.model.architecture_name()
    }

    pub fn encode(&self) -> Vec<u8> {
        let (config, arch, n_classes, n_features, named): (
            Value,
            Option<ArchSpec>,
            Option<usize>,
            Option<usize>,
            Vec<(String, Vec<f32>)>,
        ) = match &self.model {
            TrainedModel::Forest(m) => (
                serde_json::to_value(&m.config).unwrap(),
                None,
                Some(m.n_classes),
                Some(m.n_features),
                m.trees
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (format!("tree_{i:05}"), tree_to_array(t)))
                    .collect(),
            ),
            TrainedModel::Cnn(m) => (
                serde_json::to_value(&m.config).unwrap(),
                Some(m.arch.clone()),
                None,
                None,
                m.param_names()
                    .into_iter()
                    .zip(m.params().into_iter().cloned())
                    .collect(),
            ),
        };
        let header = Header {
            format_version: BLOB_FORMAT_VERSION,
            architecture: self.model.architecture_name().to_string(),
            config,
            arch,
            n_classes,
            n_features,
            class_map: self.class_map.clone(),
            feature_spec: self.feature_spec.as_ref().map(feature_spec_to_json),
            filter_spec: filter_spec_to_json(&self.filter_spec),
            ndvi_bands: self.ndvi_bands,
            layer_ids: self.layer_ids.clone(),
            window_size: self.window_size,
            arrays: named
                .iter()
                .map(|(name, data)| ArrayEntry {
                    name: name.clone(),
                    len: data.len(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header).unwrap();
        let payload: usize = named.iter().map(|(_, d)| d.len() * 4).sum();
        let mut out = Vec::with_capacity(12 + header_bytes.len() + payload);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&BLOB_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for (_, data) in &named {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<ModelBlob> {
        if bytes.len() < 12 {
            return Err(corrupt("shorter than the fixed preamble"));
        }
        if bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != BLOB_FORMAT_VERSION {
            return Err(Error::BlobVersion {
                expected: BLOB_FORMAT_VERSION,
                got: version,
            });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body_start = 12 + header_len;
        if bytes.len() < body_start {
            return Err(corrupt("header extends past end of blob"));
        }
        let header: Header = serde_json::from_slice(&bytes[12..body_start])
            .map_err(|e| corrupt(format!("header not valid JSON: {e}")))?;
        if header.format_version != version {
            return Err(corrupt("header/preamble version disagreement"));
        }
        let total: usize = header.arrays.iter().map(|a| a.len).sum();
        if bytes.len() - body_start != total * 4 {
            return Err(corrupt(format!(
                "payload is {} bytes, arrays declare {}",
                bytes.len() - body_start,
                total * 4
            )));
        }
        let mut arrays: Vec<(String, Vec<f32>)> = Vec::with_capacity(header.arrays.len());
        let mut off = body_start;
        for entry in &header.arrays {
            let mut data = Vec::with_capacity(entry.len);
            for _ in 0..entry.len {
                data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
                off += 4;
            }
            arrays.push((entry.name.clone(), data));
        }

        let model = match header.architecture.as_str() {
            "random_forest" => {
                let config: RandomForestConfig = serde_json::from_value(header.config.clone())
                    .map_err(|e| corrupt(format!("forest config: {e}")))?;
                let n_classes = header
                    .n_classes
                    .ok_or_else(|| corrupt("forest blob missing n_classes"))?;
                let n_features = header
                    .n_features
                    .ok_or_else(|| corrupt("forest blob missing n_features"))?;
                if arrays.len() != config.n_estimators {
                    return Err(corrupt(format!(
                        "{} tree arrays for n_estimators {}",
                        arrays.len(),
                        config.n_estimators
                    )));
                }
                let trees = arrays
                    .iter()
                    .enumerate()
                    .map(|(i, (_, data))| tree_from_array(data, n_features, n_classes, i))
                    .collect::<Result<Vec<_>>>()?;
                TrainedModel::Forest(RandomForestModel {
                    config,
                    n_classes,
                    n_features,
                    trees,
                })
            }
            "flexcnn" => {
                let config: FlexCnnConfig = serde_json::from_value(header.config.clone())
                    .map_err(|e| corrupt(format!("cnn config: {e}")))?;
                let arch = header
                    .arch
                    .clone()
                    .unwrap_or_else(|| arch_for(config.preset));
                let mut net = FlexCnn::<f32>::init(&config, &arch)
                    .map_err(|e| corrupt(format!("cnn shape: {e}")))?;
                let names = net.param_names();
                if names.len() != arrays.len() {
                    return Err(corrupt(format!(
                        "{} arrays for {} parameter tensors",
                        arrays.len(),
                        names.len()
                    )));
                }
                for ((want, param), (got, data)) in
                    names.iter().zip(net.params_mut()).zip(&arrays)
                {
                    if want != got {
                        return Err(corrupt(format!(
                            "parameter order mismatch: expected {want}, found {got}"
                        )));
                    }
                    if param.len() != data.len() {
                        return Err(corrupt(format!(
                            "parameter {want}: {} values for tensor of {}",
                            data.len(),
                            param.len()
                        )));
                    }
                    param.copy_from_slice(data);
                }
                TrainedModel::Cnn(net)
            }
            other => return Err(corrupt(format!("unknown architecture {other:?}"))),
        };

        if header.class_map.len() != model.n_classes() {
            return Err(corrupt(format!(
                "class map has {} entries for {} classes",
                header.class_map.len(),
                model.n_classes()
            )));
        }
        Ok(ModelBlob {
            class_map: header.class_map,
            feature_spec: header
                .feature_spec
                .as_ref()
                .map(feature_spec_from_json)
                .transpose()
                .map_err(|e| corrupt(format!("feature spec: {e}")))?,
            filter_spec: filter_spec_from_json(&header.filter_spec)
                .map_err(|e| corrupt(format!("filter spec: {e}")))?,
            ndvi_bands: header.ndvi_bands,
            layer_ids: header.layer_ids,
            window_size: header.window_size,
            model,
        })
    }
}

#[cfg(test)]
mod tests;
