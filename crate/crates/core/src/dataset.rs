//! Ground-truth and prediction file schemas.
//!
//! Ground truth is a JSON document:
//!
//! ```json
//! {"images": [{"image_id": "a", "width": 256, "height": 256,
//!              "points": [[30, 40]], "boxes": [[10, 20, 50, 60]],
//!              "mask_file": "masks/a.png"}]}
//! ```
//!
//! Predictions are newline-delimited JSON, one object per image, carrying
//! either raw model output or an already parsed response:
//!
//! ```json
//! {"image_id": "a", "response_text": "<think>…</think>…", "mask_file": "pred/a.json"}
//! {"image_id": "b", "parsed": {"think": "", "detections": [], "fish_count": 0}}
//! ```
//!
//! Relative mask paths resolve against the directory of the file that
//! names them.

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::Point;
use crate::metrics::segmentation::Mask;
use crate::parser::{parse_response, ParsedResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<PathBuf>,
}

impl GroundTruthRecord {
    pub fn image_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("image {:?}: {msg}", self.image_id)));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        if let Some(p) = self
            .points
            .iter()
            .find(|(x, y)| !(0.0..=w).contains(x) || !(0.0..=h).contains(y))
        {
            return bad(format!("point {p:?} outside {w}x{h}"));
        }
        if let Some(b) = self.boxes.iter().flatten().find(|b| b.iter().any(|v| !v.is_finite())) {
            return bad(format!("non-finite box {b:?}"));
        }
        Ok(())
    }

    pub fn load_mask(&self, base: &Path) -> Result<Option<Mask>> {
        let Some(rel) = &self.mask_file else {
            return Ok(None);
        };
        let mask = Mask::load(&base.join(rel))?;
        if mask.size() != self.image_size() {
            return Err(Error::InvalidInput(format!(
                "image {:?}: mask is {:?}, image is {:?}",
                self.image_id,
                mask.size(),
                self.image_size()
            )));
        }
        Ok(Some(mask))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub images: Vec<GroundTruthRecord>,
}

impl GroundTruthFile {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rec in &self.images {
            rec.validate()?;
            if !seen.insert(rec.image_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate image id {:?}", rec.image_id)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text).map_err(|e| Error::file(path, e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
    }

    pub fn get(&self, image_id: &str) -> Option<&GroundTruthRecord> {
        self.images.iter().find(|r| r.image_id == image_id)
    }
}

/// One line of a prediction file as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<ParsedResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub image_id: String,
    /// `None` when the raw response could not be parsed.
    pub parsed: Option<ParsedResponse>,
    pub mask: Option<Mask>,
}

impl PredictionLine {
    fn resolve(self, base: &Path) -> Result<PredictionRecord> {
        let parsed = match (self.response_text, self.parsed) {
            (Some(text), None) => parse_response(&text).parsed,
            (None, Some(p)) => Some(p),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "prediction for {:?} needs exactly one of response_text or parsed",
                    self.image_id
                )))
            }
        };
        let mask = match &self.mask_file {
            Some(rel) => Some(Mask::load(&base.join(rel))?),
            None => None,
        };
        Ok(PredictionRecord {
            image_id: self.image_id,
            parsed,
            mask,
        })
    }
}

/// Reads a prediction JSONL file, loading any referenced masks.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str::<PredictionLine>(&line)
            .map_err(Error::from)
            .and_then(|l| l.resolve(base))
            .map_err(|e| Error::file(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str) -> GroundTruthRecord {
        GroundTruthRecord {
            image_id: id.into(),
            width: 64,
            height: 48,
            points: vec![(1.0, 2.0), (63.5, 0.0)],
            boxes: Some(vec![[0.0, 0.0, 4.0, 4.0]]),
            mask_file: None,
        }
    }

    #[test]
    fn parses_documented_schema() {
        let text = r#"{"images": [{"image_id": "a", "width": 256, "height": 256,
            "points": [[30, 40]], "boxes": [[10, 20, 50, 60]], "mask_file": "masks/a.png"}]}"#;
        let f = GroundTruthFile::from_json(text).unwrap();
        assert_eq!(f.images[0].points, vec![(30.0, 40.0)]);
        assert_eq!(f.images[0].mask_file.as_deref(), Some(Path::new("masks/a.png")));
    }

    #[test]
    fn rejects_invalid_documents() {
        let out_of_bounds = r#"{"images": [{"image_id": "a", "width": 10, "height": 10, "points": [[11, 1]]}]}"#;
        assert!(GroundTruthFile::from_json(out_of_bounds).is_err());
        let dup = r#"{"images": [{"image_id": "a", "width": 10, "height": 10}, {"image_id": "a", "width": 10, "height": 10}]}"#;
        assert!(GroundTruthFile::from_json(dup).is_err());
        let unknown = r#"{"images": [{"image_id": "a", "width": 10, "height": 10, "pts": []}]}"#;
        assert!(GroundTruthFile::from_json(unknown).is_err());
        assert!(GroundTruthFile::from_json("[]").is_err());
    }

    #[test]
    fn prediction_lines_need_one_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(&path, "{\"image_id\": \"a\"}\n").unwrap();
        assert!(read_predictions(&path).is_err());
        std::fs::write(
            &path,
            "{\"image_id\": \"a\", \"response_text\": \"garbage\"}\n\n{\"image_id\": \"b\", \"parsed\": {\"think\": \"\", \"detections\": [], \"fish_count\": 0}}\n",
        )
        .unwrap();
        let recs = read_predictions(&path).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs[0].parsed.is_none());
        assert_eq!(recs[1].parsed.as_ref().unwrap().fish_count, 0);
    }

    #[test]
    fn mask_size_checked_against_image() {
        let dir = tempfile::tempdir().unwrap();
        Mask::from_fn(10, 10, |_, _| true)
            .save_png(&dir.path().join("m.png"))
            .unwrap();
        let mut rec = record("a");
        rec.mask_file = Some("m.png".into());
        assert!(rec.load_mask(dir.path()).is_err());
        rec.width = 10;
        rec.height = 10;
        rec.points.clear();
        assert!(rec.load_mask(dir.path()).unwrap().is_some());
    }

    proptest! {
        #[test]
        fn written_files_reread_identically(
            pts in proptest::collection::vec((0.0..=64.0f64, 0.0..=48.0f64), 0..6),
            n in 1usize..4,
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("gt.json");
            let images = (0..n).map(|i| GroundTruthRecord { points: pts.clone(), ..record(&format!("img{i}")) }).collect();
            let file = GroundTruthFile { images };
            file.write(&path).unwrap();
            prop_assert_eq!(GroundTruthFile::read(&path).unwrap(), file);
        }
    }
}
