//! Label manifests: a class list plus labeled GPS coordinates.
//!
//! This file is the entire labeled input a training run needs. The document is
//! JSON with a class-map header and an array of `{lat, lon, label, time?}`
//! entries; `time` pins a label to its observation instant and overrides the
//! query snapshot during assembly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly::LabeledPoint;
use crate::error::{Error, Result};
use crate::timestamp::Timestamp;

/// One labeled coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPoint {
    pub lat: f64,
    pub lon: f64,
    pub label: String,
    /// Observation instant; absent means "use the query snapshot".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<Timestamp>,
}

/// The manifest document. `classes` is the display order for reports; every
/// point label must appear in it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelManifest {
    pub classes: Vec<String>,
    pub points: Vec<ManifestPoint>,
}

impl LabelManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path)?;
        let manifest: LabelManifest = serde_json::from_slice(&data)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::BadManifest("no classes declared".into()));
        }
        for (i, class) in self.classes.iter().enumerate() {
            if class.is_empty() {
                return Err(Error::BadManifest(format!("class {i} has an empty name")));
            }
            if self.classes[..i].contains(class) {
                return Err(Error::BadManifest(format!("duplicate class {class:?}")));
            }
        }
        if self.points.is_empty() {
            return Err(Error::BadManifest("no points".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.lat.is_finite() || !p.lon.is_finite() {
                return Err(Error::BadManifest(format!(
                    "point {i}: non-finite coordinate ({}, {})",
                    p.lat, p.lon
                )));
            }
            if !self.classes.contains(&p.label) {
                return Err(Error::BadManifest(format!(
                    "point {i}: label {:?} is not in the class list",
                    p.label
                )));
            }
        }
        Ok(())
    }

    /// Assembly-ready points; `time` becomes the per-point label time.
    pub fn to_points(&self) -> Vec<LabeledPoint> {
        self.points
            .iter()
            .map(|p| LabeledPoint {
                lat: p.lat,
                lon: p.lon,
                label: Some(p.label.clone()),
                label_time: p.time,
            })
            .collect()
    }

    /// (lat, lon) pairs in point order, for a query's spatial block.
    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.lat, p.lon)).collect()
    }

    /// Per-point labels, parallel to `coords()`.
    pub fn labels(&self) -> Vec<String> {
        self.points.iter().map(|p| p.label.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LabelManifest {
        LabelManifest {
            classes: vec!["alder".into(), "birch".into()],
            points: vec![
                ManifestPoint {
                    lat: 40.0,
                    lon: -75.0,
                    label: "alder".into(),
                    time: Some(Timestamp::parse("2018-01-29T12:00:00Z").unwrap()),
                },
                ManifestPoint {
                    lat: 40.1,
                    lon: -75.1,
                    label: "birch".into(),
                    time: None,
                },
            ],
        }
    }

    #[test]
    fn save_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.json");
        let manifest = sample();
        manifest.save(&path).unwrap();
        assert_eq!(LabelManifest::load(&path).unwrap(), manifest);
    }

    #[test]
    fn absent_time_is_omitted_from_json() {
        let json = serde_json::to_string(&sample()).unwrap();
        assert_eq!(json.matches("\"time\"").count(), 1);
    }

    #[test]
    fn unknown_label_rejected() {
        let mut manifest = sample();
        manifest.points[1].label = "oak".into();
        let err = manifest.validate().unwrap_err();
        assert!(err.to_string().contains("\"oak\""), "{err}");
    }

    #[test]
    fn duplicate_class_rejected() {
        let mut manifest = sample();
        manifest.classes.push("alder".into());
        assert!(manifest.validate().is_err());
    }

    #[test]
    fn degenerate_documents_rejected() {
        let empty_classes = LabelManifest {
            classes: vec![],
            points: sample().points,
        };
        assert!(empty_classes.validate().is_err());
        let empty_points = LabelManifest {
            classes: vec!["alder".into()],
            points: vec![],
        };
        assert!(empty_points.validate().is_err());
        let mut bad_coord = sample();
        bad_coord.points[0].lat = f64::NAN;
        assert!(bad_coord.validate().is_err());
    }

    #[test]
    fn to_points_carries_labels_and_times() {
        let points = sample().to_points();
        assert_eq!(points[0].label.as_deref(), Some("alder"));
        assert_eq!(
            points[0].label_time,
            Some(Timestamp::parse("2018-01-29T12:00:00Z").unwrap())
        );
        assert_eq!(points[1].label_time, None);
    }
}
