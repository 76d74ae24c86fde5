//! Detection records and the conversion of detected geometry into spatial
//! relations.
//!
//! Image coordinates follow the usual raster convention: x grows to the
//! right and y grows downward, so "above" means a smaller y.

use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Predicate;
use crate::error::{Error, LineError, Result};
use crate::relation::{Relation, RelationSet};

/// Confidence threshold applied when none is given.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate().map_err(Error::invalid)?;
        Ok(b)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err("coordinates must be finite".into());
        }
        if coords.iter().any(|c| *c < 0.0) {
            return Err("coordinates must be non-negative".into());
        }
        if self.x_min >= self.x_max {
            return Err(format!("x_min {} must be less than x_max {}", self.x_min, self.x_max));
        }
        if self.y_min >= self.y_max {
            return Err(format!("y_min {} must be less than y_max {}", self.y_min, self.y_max));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Point {
        centroid(self)
    }

    pub fn scaled(&self, factor: f64) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min * factor,
            y_min: self.y_min * factor,
            x_max: self.x_max * factor,
            y_max: self.y_max * factor,
        }
    }

    /// The box after mirroring an image of width `width` left-to-right.
    pub fn mirrored_horizontal(&self, width: f64) -> BoundingBox {
        BoundingBox {
            x_min: width - self.x_max,
            y_min: self.y_min,
            x_max: width - self.x_min,
            y_max: self.y_max,
        }
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x_min, self.y_min, self.x_max, self.y_max].serialize(serializer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

pub fn centroid(b: &BoundingBox) -> Point {
    Point {
        x: (b.x_min + b.x_max) / 2.0,
        y: (b.y_min + b.y_max) / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// All detections for one generated image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageDetections {
    pub prompt_id: String,
    pub image_index: usize,
    pub detections: Vec<Detection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_height: Option<f64>,
}

impl ImageDetections {
    pub fn mirrored_horizontal(&self, width: f64) -> ImageDetections {
        ImageDetections {
            detections: self
                .detections
                .iter()
                .map(|d| Detection {
                    bbox: d.bbox.mirrored_horizontal(width),
                    ..d.clone()
                })
                .collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, factor: f64) -> ImageDetections {
        ImageDetections {
            detections: self
                .detections
                .iter()
                .map(|d| Detection {
                    bbox: d.bbox.scaled(factor),
                    ..d.clone()
                })
                .collect(),
            image_width: self.image_width.map(|w| w * factor),
            image_height: self.image_height.map(|h| h * factor),
            ..self.clone()
        }
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, line: usize, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| LineError::field(line, name, "missing").into())
}

fn as_f64(v: &Value, line: usize, name: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| LineError::field(line, name, format!("expected a number, got {v}")).into())
}

fn parse_detection(v: &Value, line: usize, path: &str) -> Result<Detection> {
    let obj = v
        .as_object()
        .ok_or_else(|| LineError::field(line, path, "expected an object"))?;
    let label_path = format!("{path}.label");
    let label = obj
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| LineError::field(line, &label_path, "expected a string"))?
        .to_string();

    let score_path = format!("{path}.score");
    let score_value = obj
        .get("score")
        .ok_or_else(|| LineError::field(line, &score_path, "missing"))?;
    let score = as_f64(score_value, line, &score_path)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(LineError::field(line, score_path, format!("{score} is outside [0, 1]")).into());
    }

    let box_path = format!("{path}.box");
    let coords = obj
        .get("box")
        .and_then(Value::as_array)
        .ok_or_else(|| LineError::field(line, &box_path, "expected [x_min, y_min, x_max, y_max]"))?;
    if coords.len() != 4 {
        return Err(LineError::field(line, box_path, format!("expected 4 coordinates, got {}", coords.len())).into());
    }
    let mut c = [0.0; 4];
    for (slot, v) in c.iter_mut().zip(coords) {
        *slot = as_f64(v, line, &box_path)?;
    }
    let bbox = BoundingBox {
        x_min: c[0],
        y_min: c[1],
        x_max: c[2],
        y_max: c[3],
    };
    bbox.validate().map_err(|m| LineError::field(line, &box_path, m))?;
    Ok(Detection { label, score, bbox })
}

/// Parses one line of the detection file format.
pub fn parse_detection_line(text: &str, line: usize) -> Result<ImageDetections> {
    let value: Value = serde_json::from_str(text).map_err(|e| LineError::Malformed {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| LineError::Malformed {
        line,
        message: "expected a JSON object".into(),
    })?;

    let prompt_id = field(obj, line, "prompt_id")?
        .as_str()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| LineError::field(line, "prompt_id", "expected a nonempty string"))?
        .to_string();
    let image_index = field(obj, line, "image_index")?
        .as_u64()
        .ok_or_else(|| LineError::field(line, "image_index", "expected a non-negative integer"))?
        as usize;
    let detections = field(obj, line, "detections")?
        .as_array()
        .ok_or_else(|| LineError::field(line, "detections", "expected a list"))?
        .iter()
        .enumerate()
        .map(|(i, d)| parse_detection(d, line, &format!("detections[{i}]")))
        .collect::<Result<Vec<_>>>()?;

    let dimension = |name: &str| -> Result<Option<f64>> {
        match obj.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => {
                let x = as_f64(v, line, name)?;
                if !(x.is_finite() && x > 0.0) {
                    return Err(LineError::field(line, name, "must be positive").into());
                }
                Ok(Some(x))
            }
        }
    };

    Ok(ImageDetections {
        prompt_id,
        image_index,
        detections,
        image_width: dimension("image_width")?,
        image_height: dimension("image_height")?,
    })
}

/// Reads a line-delimited detection file.
///
/// Blank lines are skipped. Record order is preserved; a repeated
/// `(prompt_id, image_index)` key is an error. When `images_per_prompt` is
/// given, indices must be below it.
pub fn parse_detections<R: BufRead>(reader: R, images_per_prompt: Option<usize>) -> Result<Vec<ImageDetections>> {
    let mut out = Vec::new();
    let mut keys = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_detection_line(&line, lineno)?;
        if let Some(n) = images_per_prompt {
            if record.image_index >= n {
                return Err(LineError::field(
                    lineno,
                    "image_index",
                    format!("{} is not below images-per-prompt {n}", record.image_index),
                )
                .into());
            }
        }
        if !keys.insert((record.prompt_id.clone(), record.image_index)) {
            return Err(LineError::DuplicateKey {
                line: lineno,
                prompt_id: record.prompt_id,
                image_index: record.image_index,
            }
            .into());
        }
        out.push(record);
    }
    Ok(out)
}

pub fn labels_match(detected: &str, category: &str) -> bool {
    detected.trim().eq_ignore_ascii_case(category.trim())
}

/// Highest-scoring detection of `label` with score at least `threshold`.
/// Ties keep the earliest detection.
pub fn select_object<'a>(detections: &'a [Detection], label: &str, threshold: f64) -> Option<&'a Detection> {
    let mut best: Option<&Detection> = None;
    for d in detections {
        if d.score < threshold || !labels_match(&d.label, label) {
            continue;
        }
        if best.is_none_or(|b| d.score > b.score) {
            best = Some(d);
        }
    }
    best
}

/// Relations of `a` relative to `b` by strict sign tests on the centroids.
pub fn derive_relations(a: Point, b: Point) -> RelationSet {
    let mut set = RelationSet::EMPTY;
    if a.x < b.x {
        set.insert(Relation::Left);
    }
    if a.x > b.x {
        set.insert(Relation::Right);
    }
    if a.y < b.y {
        set.insert(Relation::Above);
    }
    if a.y > b.y {
        set.insert(Relation::Below);
    }
    set
}

/// Per-image outcome for a relational prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEvaluation {
    pub prompt_id: String,
    pub image_index: usize,
    pub object_a_present: bool,
    pub object_b_present: bool,
    pub oa: bool,
    pub relations_satisfied: RelationSet,
    pub visor: bool,
}

impl ImageEvaluation {
    /// Evaluation for an image that was never produced.
    pub fn missing(prompt_id: &str, image_index: usize) -> ImageEvaluation {
        ImageEvaluation {
            prompt_id: prompt_id.to_string(),
            image_index,
            object_a_present: false,
            object_b_present: false,
            oa: false,
            relations_satisfied: RelationSet::EMPTY,
            visor: false,
        }
    }
}

/// Scores one image against `predicate`.
///
/// `prompt_id` names the prompt the predicate was rendered for; it must match
/// the record.
pub fn evaluate_image(
    record: &ImageDetections,
    prompt_id: &str,
    predicate: &Predicate,
    threshold: f64,
) -> Result<ImageEvaluation> {
    if record.prompt_id != prompt_id {
        return Err(Error::IdMismatch {
            record: record.prompt_id.clone(),
            prompt: prompt_id.to_string(),
        });
    }
    let a = select_object(&record.detections, &predicate.subject.name, threshold);
    let b = select_object(&record.detections, &predicate.object.name, threshold);
    let oa = a.is_some() && b.is_some();
    let relations_satisfied = match (a, b) {
        (Some(a), Some(b)) => derive_relations(a.bbox.centroid(), b.bbox.centroid()),
        _ => RelationSet::EMPTY,
    };
    Ok(ImageEvaluation {
        prompt_id: record.prompt_id.clone(),
        image_index: record.image_index,
        object_a_present: a.is_some(),
        object_b_present: b.is_some(),
        oa,
        visor: oa && relations_satisfied.contains(predicate.relation),
        relations_satisfied,
    })
}

/// Whether every named category is detected above `threshold`.
pub fn all_present(record: &ImageDetections, labels: &[&str], threshold: f64) -> bool {
    labels
        .iter()
        .all(|l| select_object(&record.detections, l, threshold).is_some())
}
