use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::minidet::Detection;
use crate::scenegen::Environment;

/// What counts as a successful frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalKind {
    /// The target class is absent from the frame's detections.
    Disappearance,
    /// At least one detection of the target class is present.
    Creation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame: usize,
    pub detections: Vec<Detection>,
    pub target_detected: bool,
}

/// Per-frame outcomes with the success count and ratio.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub kind: EvalKind,
    /// `None` for independent placements rather than a sweep.
    pub environment: Option<Environment>,
    pub detector: String,
    pub target_class: usize,
    pub total_frames: usize,
    pub frames_without_target: usize,
    pub success_frames: usize,
    #[serde(serialize_with = "four_decimals")]
    pub success_ratio: f64,
    pub frames: Vec<FrameRecord>,
}

fn four_decimals<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e4).round() / 1e4)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReport {
    kind: EvalKind,
    environment: Option<Environment>,
    detector: String,
    target_class: usize,
    total_frames: usize,
    frames_without_target: usize,
    success_frames: usize,
    #[allow(dead_code)]
    success_ratio: f64,
    frames: Vec<FrameRecord>,
}

impl<'de> Deserialize<'de> for EvalReport {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = RawReport::deserialize(d)?;
        let report = EvalReport::from_records(r.kind, r.environment, r.detector, r.target_class, r.frames);
        if report.total_frames != r.total_frames
            || report.frames_without_target != r.frames_without_target
            || report.success_frames != r.success_frames
        {
            return Err(serde::de::Error::custom("frame counts disagree with the per-frame records"));
        }
        Ok(report)
    }
}

impl EvalReport {
    /// Builds counts and ratio from per-frame records.
    pub fn from_records(
        kind: EvalKind,
        environment: Option<Environment>,
        detector: String,
        target_class: usize,
        frames: Vec<FrameRecord>,
    ) -> Self {
        let total_frames = frames.len();
        let frames_without_target = frames.iter().filter(|f| !f.target_detected).count();
        let success_frames = match kind {
            EvalKind::Disappearance => frames_without_target,
            EvalKind::Creation => total_frames - frames_without_target,
        };
        let success_ratio = if total_frames == 0 { 0.0 } else { success_frames as f64 / total_frames as f64 };
        EvalReport {
            kind,
            environment,
            detector,
            target_class,
            total_frames,
            frames_without_target,
            success_frames,
            success_ratio,
            frames,
        }
    }

    /// `success/total (xx.x%)`.
    pub fn summary(&self) -> String {
        summary_line(self.success_frames, self.total_frames)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,detections,target_detected\n");
        for f in &self.frames {
            let _ = writeln!(s, "{},{},{}", f.frame, f.detections.len(), f.target_detected);
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(0, format!("eval report: {e}")))
    }
}

pub fn summary_line(success: usize, total: usize) -> String {
    let pct = if total == 0 { 0.0 } else { 100.0 * success as f64 / total as f64 };
    format!("{success}/{total} ({pct:.1}%)")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn write_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json(),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Paired reports of two detectors over one frame sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferReport {
    pub source: EvalReport,
    pub target: EvalReport,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(hits: &[bool]) -> Vec<FrameRecord> {
        hits.iter()
            .enumerate()
            .map(|(i, &h)| FrameRecord { frame: i, detections: Vec::new(), target_detected: h })
            .collect()
    }

    #[test]
    fn table_style_summary() {
        let mut hits = vec![false; 202];
        hits.extend(vec![true; 34]);
        let r = EvalReport::from_records(EvalKind::Disappearance, None, "d".into(), 0, records(&hits));
        assert_eq!((r.frames_without_target, r.total_frames), (202, 236));
        assert_eq!(r.summary(), "202/236 (85.6%)");
        assert_eq!(r.success_ratio * 236.0, 202.0);
    }

    #[test]
    fn creation_counts_hits() {
        let r =
            EvalReport::from_records(EvalKind::Creation, None, "d".into(), 0, records(&[true, false, false, false]));
        assert_eq!(r.success_ratio, 0.25);
        assert_eq!(r.frames_without_target, 3);
    }

    #[test]
    fn empty_csv_is_header_only() {
        let r = EvalReport::from_records(EvalKind::Disappearance, None, "d".into(), 0, Vec::new());
        assert_eq!(r.to_csv(), "frame,detections,target_detected\n");
    }

    #[test]
    fn json_round_trip_and_rounded_ratio() {
        let r = EvalReport::from_records(
            EvalKind::Disappearance,
            Some(Environment::OutdoorAnalog),
            "minidet[x]#00".into(),
            0,
            records(&[true, false, false]),
        );
        let text = r.to_json();
        assert!(text.contains("\"success_ratio\": 0.6667"));
        assert!(text.contains("\"environment\": \"outdoor-analog\""));
        assert_eq!(EvalReport::from_json(&text).unwrap(), r);
        let tampered = text.replace("\"frames_without_target\": 2", "\"frames_without_target\": 1");
        assert!(EvalReport::from_json(&tampered).is_err());
    }
}
