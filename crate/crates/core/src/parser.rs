//! Three-tag structured response format.
//!
//! A response is expected to carry exactly one each of `<think>`,
//! `<detection>` and `<fish_count>`, in any order, with arbitrary text
//! between them. The detection block holds a JSON array of entries of the
//! form `{"bbox_2d": [x1, y1, x2, y2], "point_2d": [x, y], "label": "fish"}`.
//!
//! Parsing never fails: every kind of malformation is reported through
//! [`FormatReport`] and an absent [`ParsedResponse`].

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const DETECTION_OPEN: &str = "<detection>";
pub const DETECTION_CLOSE: &str = "</detection>";
pub const COUNT_OPEN: &str = "<fish_count>";
pub const COUNT_CLOSE: &str = "</fish_count>";

/// The only label accepted as well-formed.
pub const FISH_LABEL: &str = "fish";

/// One localized instance: a corner-normalized box, a keypoint and a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox_2d: [f64; 4],
    pub point_2d: [f64; 2],
    pub label: String,
}

impl Detection {
    /// Builds a detection, normalizing swapped box corners.
    pub fn new(bbox: [f64; 4], point: [f64; 2], label: impl Into<String>) -> Self {
        Self {
            bbox_2d: normalize_box(bbox),
            point_2d: point,
            label: label.into(),
        }
    }

    pub fn point(&self) -> (f64, f64) {
        (self.point_2d[0], self.point_2d[1])
    }
}

/// Per-axis min/max so that `x1 <= x2` and `y1 <= y2`.
pub fn normalize_box([x1, y1, x2, y2]: [f64; 4]) -> [f64; 4] {
    [x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub think: String,
    pub detections: Vec<Detection>,
    pub fish_count: u64,
}

impl ParsedResponse {
    pub fn n_pred(&self) -> usize {
        self.detections.len()
    }

    /// True when the declared count equals the number of emitted detections.
    pub fn is_aligned(&self) -> bool {
        self.detections.len() as u64 == self.fish_count
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.detections.iter().map(Detection::point).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormatReport {
    /// All three tags present, each exactly once.
    pub structure_ok: bool,
    pub entries_total: usize,
    pub entries_well_formed: usize,
}

/// Result of [`parse_response`]: the report is always present.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub parsed: Option<ParsedResponse>,
    pub report: FormatReport,
}

/// A located tag pair: byte range of the body within the source text.
#[derive(Debug, Clone, Copy)]
struct Span {
    start: usize,
    end: usize,
}

pub fn parse_response(text: &str) -> ParseOutcome {
    let mut report = FormatReport::default();

    // The think body is taken verbatim up to the first closing tag, so it is
    // cut out before searching for the other tags.
    let think = locate_think(text);
    let (before, after) = match think {
        Some((outer, _)) => (&text[..outer.start], &text[outer.end..]),
        None => (text, ""),
    };
    let rest = [before, after];

    let think_ok = think.is_some() && rest.iter().all(|s| !s.contains(THINK_OPEN) && !s.contains(THINK_CLOSE));
    let detection = unique_tag(&rest, DETECTION_OPEN, DETECTION_CLOSE);
    let count = unique_tag(&rest, COUNT_OPEN, COUNT_CLOSE);

    // Entries are counted whenever a single detection block exists, even if
    // the overall structure is broken.
    let detections = detection.map(|body| {
        let (entries, total) = parse_detection_block(body);
        report.entries_total = total;
        report.entries_well_formed = entries.len();
        entries
    });

    report.structure_ok = think_ok && detection.is_some() && count.is_some();
    if !report.structure_ok {
        return ParseOutcome { parsed: None, report };
    }

    let parsed = count.and_then(parse_count).map(|fish_count| ParsedResponse {
        think: think.map(|(_, body)| body.to_owned()).unwrap_or_default(),
        detections: detections.unwrap_or_default(),
        fish_count,
    });
    ParseOutcome { parsed, report }
}

/// Returns the outer span (open tag through close tag) and the body.
fn locate_think(text: &str) -> Option<(Span, &str)> {
    let open = text.find(THINK_OPEN)?;
    let body_start = open + THINK_OPEN.len();
    let close = text[body_start..].find(THINK_CLOSE)? + body_start;
    Some((
        Span {
            start: open,
            end: close + THINK_CLOSE.len(),
        },
        &text[body_start..close],
    ))
}

/// Finds the body of a tag that must occur exactly once across `segments`.
fn unique_tag<'a>(segments: &[&'a str], open: &str, close: &str) -> Option<&'a str> {
    let opens: usize = segments.iter().map(|s| s.matches(open).count()).sum();
    let closes: usize = segments.iter().map(|s| s.matches(close).count()).sum();
    if opens != 1 || closes != 1 {
        return None;
    }
    segments.iter().find_map(|s| {
        let o = s.find(open)? + open.len();
        let c = s[o..].find(close)? + o;
        Some(&s[o..c])
    })
}

fn parse_count(body: &str) -> Option<u64> {
    let body = body.trim();
    if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    body.parse().ok()
}

/// Returns the well-formed detections and the total number of entries.
///
/// A block that is not a JSON array counts as a single malformed entry;
/// an all-whitespace block is an empty list.
fn parse_detection_block(body: &str) -> (Vec<Detection>, usize) {
    if body.trim().is_empty() {
        return (Vec::new(), 0);
    }
    let entries = match serde_json::from_str::<Value>(body) {
        Ok(Value::Array(entries)) => entries,
        _ => return (Vec::new(), 1),
    };
    let total = entries.len();
    let detections = entries
        .iter()
        .filter_map(|e| e.as_object().and_then(parse_entry))
        .collect();
    (detections, total)
}

fn parse_entry(obj: &Map<String, Value>) -> Option<Detection> {
    if obj.len() != 3 {
        return None;
    }
    let bbox: [f64; 4] = numbers(obj.get("bbox_2d")?)?;
    let point: [f64; 2] = numbers(obj.get("point_2d")?)?;
    let label = obj.get("label")?.as_str()?;
    if label != FISH_LABEL {
        return None;
    }
    Some(Detection::new(bbox, point, label))
}

fn numbers<const N: usize>(v: &Value) -> Option<[f64; N]> {
    let arr = v.as_array()?;
    if arr.len() != N {
        return None;
    }
    let mut out = [0.0; N];
    for (slot, x) in out.iter_mut().zip(arr) {
        let x = x.as_f64()?;
        if !x.is_finite() {
            return None;
        }
        *slot = x;
    }
    Some(out)
}

/// Renders a response in the three-tag format.
///
/// Fails if the think text contains the closing think tag, since that text
/// could not be recovered unambiguously.
pub fn serialize_response(r: &ParsedResponse) -> Result<String> {
    if r.think.contains(THINK_CLOSE) {
        return Err(Error::Serialize(format!(
            "think text contains the closing tag {THINK_CLOSE}"
        )));
    }
    let detections = serde_json::to_string(&r.detections)?;
    Ok(format!(
        "{THINK_OPEN}{}{THINK_CLOSE}\n{DETECTION_OPEN}{detections}{DETECTION_CLOSE}\n{COUNT_OPEN}{}{COUNT_CLOSE}",
        r.think, r.fish_count
    ))
}
