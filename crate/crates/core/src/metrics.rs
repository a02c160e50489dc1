//! Presentation-attack metrics over per-frame scores: confusion tallies,
//! ISO-style error rates, per-subject accuracy, five-number summaries, and
//! bit-stable report files.
//!
//! Conventions fixed here: "accept" means classified live, F1 treats live as
//! the positive class, and quartiles use linear interpolation at position
//! p * (n - 1) over the sorted values (inclusive median method).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array3;

use crate::error::{CoreError, Result};
use crate::image_buffer::ImageBuffer;
use crate::ingest::Label;

/// One scored frame. `decision` reflects the threshold in force when the
/// record was produced; report builders recompute decisions from `p_spoof`
/// so the report's own threshold stays authoritative.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub subject_id: String,
    pub video_id: String,
    pub frame_index: u32,
    pub true_label: Label,
    pub p_spoof: f64,
    pub decision: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    /// Live frames classified live.
    pub tp_live: u64,
    /// Live frames classified spoof.
    pub fn_live: u64,
    /// Spoof frames classified spoof.
    pub tn_spoof: u64,
    /// Spoof frames classified live, i.e. accepted attacks.
    pub fp_spoof: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp_live + self.fn_live + self.tn_spoof + self.fp_spoof
    }

    pub fn live_total(&self) -> u64 {
        self.tp_live + self.fn_live
    }

    pub fn spoof_total(&self) -> u64 {
        self.tn_spoof + self.fp_spoof
    }
}

/// A rate whose class may be absent. Never NaN: an empty denominator is an
/// explicit marker so it cannot silently enter aggregate tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Defined(f64),
    Undefined,
}

impl Rate {
    fn ratio(numerator: u64, denominator: u64) -> Rate {
        if denominator == 0 {
            Rate::Undefined
        } else {
            Rate::Defined(numerator as f64 / denominator as f64)
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Rate::Defined(v) => Some(*v),
            Rate::Undefined => None,
        }
    }

    pub fn expect_defined(&self, what: &str) -> Result<f64> {
        self.value()
            .ok_or_else(|| CoreError::InvalidInput(format!("{what} is undefined (empty class)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxplotSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Decision threshold the report was built with; absent when metrics
    /// were computed from bare counts.
    pub threshold: Option<f64>,
    pub counts: ConfusionCounts,
    pub accuracy: Rate,
    pub far: Rate,
    pub frr: Rate,
    pub f1: Rate,
    pub apcer: Rate,
    pub npcer: Rate,
    pub acer: Rate,
    pub per_subject: BTreeMap<String, f64>,
    /// Five-number summary of per-subject accuracies; absent without
    /// per-subject data.
    pub boxplot: Option<BoxplotSummary>,
}

/// Spoof wins at and above the threshold.
pub fn decide(p_spoof: f64, threshold: f64) -> Label {
    if p_spoof >= threshold {
        Label::Spoof
    } else {
        Label::Live
    }
}

fn validate_threshold(threshold: f64) -> Result<()> {
    // The working range is [0, 1]; other finite values are still total
    // (below 0 everything is spoof, above 1 everything is live) and are
    // accepted so boundary behavior stays testable. Config-level validation
    // is stricter.
    if !threshold.is_finite() {
        return Err(CoreError::InvalidInput(format!(
            "threshold must be finite, got {threshold}"
        )));
    }
    Ok(())
}

fn validate_records(records: &[ScoreRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(CoreError::InvalidInput("no score records".into()));
    }
    for r in records {
        if !(0.0..=1.0).contains(&r.p_spoof) {
            return Err(CoreError::InvalidInput(format!(
                "p_spoof {} out of [0,1] for {}/{} frame {}",
                r.p_spoof, r.subject_id, r.video_id, r.frame_index
            )));
        }
    }
    Ok(())
}

pub fn confusion(records: &[ScoreRecord], threshold: f64) -> Result<ConfusionCounts> {
    validate_threshold(threshold)?;
    validate_records(records)?;
    let mut counts = ConfusionCounts::default();
    for r in records {
        match (r.true_label, decide(r.p_spoof, threshold)) {
            (Label::Live, Label::Live) => counts.tp_live += 1,
            (Label::Live, Label::Spoof) => counts.fn_live += 1,
            (Label::Spoof, Label::Spoof) => counts.tn_spoof += 1,
            (Label::Spoof, Label::Live) => counts.fp_spoof += 1,
        }
    }
    Ok(counts)
}

/// Scalar metrics from counts alone; per-subject fields stay empty.
pub fn compute_metrics(counts: &ConfusionCounts) -> MetricsReport {
    let apcer = Rate::ratio(counts.fp_spoof, counts.spoof_total());
    let npcer = Rate::ratio(counts.fn_live, counts.live_total());
    let acer = match (apcer, npcer) {
        (Rate::Defined(a), Rate::Defined(n)) => Rate::Defined((a + n) / 2.0),
        _ => Rate::Undefined,
    };
    let accuracy = Rate::ratio(counts.tp_live + counts.tn_spoof, counts.total());
    let f1 = Rate::ratio(2 * counts.tp_live, 2 * counts.tp_live + counts.fp_spoof + counts.fn_live);
    MetricsReport {
        threshold: None,
        counts: *counts,
        accuracy,
        far: apcer,
        frr: npcer,
        f1,
        apcer,
        npcer,
        acer,
        per_subject: BTreeMap::new(),
        boxplot: None,
    }
}

/// Per-subject fraction of correct stored decisions.
pub fn per_subject_accuracy(records: &[ScoreRecord]) -> Result<BTreeMap<String, f64>> {
    validate_records(records)?;
    per_subject_by(records, |r| r.decision)
}

fn per_subject_by(
    records: &[ScoreRecord],
    decision: impl Fn(&ScoreRecord) -> Label,
) -> Result<BTreeMap<String, f64>> {
    let mut correct: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for r in records {
        let entry = correct.entry(r.subject_id.clone()).or_insert((0, 0));
        entry.1 += 1;
        if decision(r) == r.true_label {
            entry.0 += 1;
        }
    }
    Ok(correct
        .into_iter()
        .map(|(s, (c, n))| (s, c as f64 / n as f64))
        .collect())
}

/// Quartiles by linear interpolation at position p * (n - 1) over the
/// sorted values (inclusive median method).
pub fn boxplot_summary(values: &[f64]) -> Result<BoxplotSummary> {
    if values.is_empty() {
        return Err(CoreError::InvalidInput("boxplot over no values".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(CoreError::InvalidInput(format!("non-finite value {bad} in boxplot input")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let quartile = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    };
    Ok(BoxplotSummary {
        min: sorted[0],
        q1: quartile(0.25),
        median: quartile(0.5),
        q3: quartile(0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Full report: decisions recomputed at `threshold`, scalar rates, per-
/// subject accuracies and their five-number summary.
pub fn build_report(records: &[ScoreRecord], threshold: f64) -> Result<MetricsReport> {
    let counts = confusion(records, threshold)?;
    let mut report = compute_metrics(&counts);
    report.threshold = Some(threshold);
    report.per_subject = per_subject_by(records, |r| decide(r.p_spoof, threshold))?;
    let accuracies: Vec<f64> = report.per_subject.values().copied().collect();
    report.boxplot = Some(boxplot_summary(&accuracies)?);
    Ok(report)
}

/// Scalar metrics at each threshold, in the given order.
pub fn threshold_sweep(records: &[ScoreRecord], thresholds: &[f64]) -> Result<Vec<MetricsReport>> {
    thresholds
        .iter()
        .map(|&t| {
            let counts = confusion(records, t)?;
            let mut report = compute_metrics(&counts);
            report.threshold = Some(t);
            Ok(report)
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_rate(r: Rate) -> String {
    match r {
        Rate::Defined(v) => fmt_f64(v),
        Rate::Undefined => "\"undefined\"".into(),
    }
}

/// Fixed-schema JSON: keys sorted at every level, reals at six decimals.
/// Byte-identical for equal reports.
pub fn report_to_json(report: &MetricsReport) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"accuracy\": {},", fmt_rate(report.accuracy));
    let _ = writeln!(s, "  \"acer\": {},", fmt_rate(report.acer));
    let _ = writeln!(s, "  \"apcer\": {},", fmt_rate(report.apcer));
    match &report.boxplot {
        Some(b) => {
            s.push_str("  \"boxplot\": {\n");
            let _ = writeln!(s, "    \"max\": {},", fmt_f64(b.max));
            let _ = writeln!(s, "    \"median\": {},", fmt_f64(b.median));
            let _ = writeln!(s, "    \"min\": {},", fmt_f64(b.min));
            let _ = writeln!(s, "    \"q1\": {},", fmt_f64(b.q1));
            let _ = writeln!(s, "    \"q3\": {}", fmt_f64(b.q3));
            s.push_str("  },\n");
        }
        None => s.push_str("  \"boxplot\": null,\n"),
    }
    s.push_str("  \"counts\": {\n");
    let _ = writeln!(s, "    \"fn_live\": {},", report.counts.fn_live);
    let _ = writeln!(s, "    \"fp_spoof\": {},", report.counts.fp_spoof);
    let _ = writeln!(s, "    \"tn_spoof\": {},", report.counts.tn_spoof);
    let _ = writeln!(s, "    \"tp_live\": {}", report.counts.tp_live);
    s.push_str("  },\n");
    let _ = writeln!(s, "  \"f1\": {},", fmt_rate(report.f1));
    let _ = writeln!(s, "  \"far\": {},", fmt_rate(report.far));
    let _ = writeln!(s, "  \"frr\": {},", fmt_rate(report.frr));
    let _ = writeln!(s, "  \"npcer\": {},", fmt_rate(report.npcer));
    if report.per_subject.is_empty() {
        s.push_str("  \"per_subject\": {},\n");
    } else {
        s.push_str("  \"per_subject\": {\n");
        let last = report.per_subject.len() - 1;
        for (i, (subject, acc)) in report.per_subject.iter().enumerate() {
            let comma = if i == last { "" } else { "," };
            let _ = writeln!(
                s,
                "    {}: {}{comma}",
                serde_json::to_string(subject).expect("string encodes"),
                fmt_f64(*acc)
            );
        }
        s.push_str("  },\n");
    }
    match report.threshold {
        Some(t) => {
            let _ = writeln!(s, "  \"threshold\": {}", fmt_f64(t));
        }
        None => s.push_str("  \"threshold\": null\n"),
    }
    s.push_str("}\n");
    s
}

fn value_rate(v: &serde_json::Value, key: &str, path: &Path) -> Result<Rate> {
    match v.get(key) {
        Some(serde_json::Value::Number(n)) => Ok(Rate::Defined(n.as_f64().unwrap())),
        Some(serde_json::Value::String(s)) if s == "undefined" => Ok(Rate::Undefined),
        other => Err(CoreError::json(path, format!("bad rate field {key}: {other:?}"))),
    }
}

fn value_f64(v: &serde_json::Value, key: &str, path: &Path) -> Result<f64> {
    v.get(key)
        .and_then(|x| x.as_f64())
        .ok_or_else(|| CoreError::json(path, format!("missing number {key}")))
}

fn value_u64(v: &serde_json::Value, key: &str, path: &Path) -> Result<u64> {
    v.get(key)
        .and_then(|x| x.as_u64())
        .ok_or_else(|| CoreError::json(path, format!("missing count {key}")))
}

/// Parses report JSON produced by [`report_to_json`]. Values come back at
/// wire precision (six decimals).
pub fn report_from_json(text: &str, path: &Path) -> Result<MetricsReport> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CoreError::json(path, e.to_string()))?;
    let counts_v = v
        .get("counts")
        .ok_or_else(|| CoreError::json(path, "missing counts"))?;
    let counts = ConfusionCounts {
        tp_live: value_u64(counts_v, "tp_live", path)?,
        fn_live: value_u64(counts_v, "fn_live", path)?,
        tn_spoof: value_u64(counts_v, "tn_spoof", path)?,
        fp_spoof: value_u64(counts_v, "fp_spoof", path)?,
    };
    let boxplot = match v.get("boxplot") {
        None | Some(serde_json::Value::Null) => None,
        Some(b) => Some(BoxplotSummary {
            min: value_f64(b, "min", path)?,
            q1: value_f64(b, "q1", path)?,
            median: value_f64(b, "median", path)?,
            q3: value_f64(b, "q3", path)?,
            max: value_f64(b, "max", path)?,
        }),
    };
    let mut per_subject = BTreeMap::new();
    if let Some(map) = v.get("per_subject").and_then(|m| m.as_object()) {
        for (subject, acc) in map {
            let acc = acc
                .as_f64()
                .ok_or_else(|| CoreError::json(path, format!("bad accuracy for {subject}")))?;
            per_subject.insert(subject.clone(), acc);
        }
    }
    let threshold = match v.get("threshold") {
        None | Some(serde_json::Value::Null) => None,
        Some(t) => Some(
            t.as_f64()
                .ok_or_else(|| CoreError::json(path, "bad threshold"))?,
        ),
    };
    Ok(MetricsReport {
        threshold,
        counts,
        accuracy: value_rate(&v, "accuracy", path)?,
        far: value_rate(&v, "far", path)?,
        frr: value_rate(&v, "frr", path)?,
        f1: value_rate(&v, "f1", path)?,
        apcer: value_rate(&v, "apcer", path)?,
        npcer: value_rate(&v, "npcer", path)?,
        acer: value_rate(&v, "acer", path)?,
        per_subject,
        boxplot,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes the report (JSON, or the per-subject CSV table) and optionally a
/// boxplot PNG. All outputs are byte-stable for equal reports.
pub fn emit_report(
    report: &MetricsReport,
    format: ReportFormat,
    out: &Path,
    plot: Option<&Path>,
) -> Result<()> {
    let body = match format {
        ReportFormat::Json => report_to_json(report),
        ReportFormat::Csv => {
            let mut s = String::from("subject,accuracy\n");
            for (subject, acc) in &report.per_subject {
                if subject.contains(',') || subject.contains('\n') {
                    return Err(CoreError::InvalidInput(format!(
                        "subject id {subject:?} cannot be written as CSV"
                    )));
                }
                let _ = writeln!(s, "{subject},{}", fmt_f64(*acc));
            }
            s
        }
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
        }
    }
    std::fs::write(out, body).map_err(|e| CoreError::io(out, e))?;
    if let Some(plot_path) = plot {
        let summary = report.boxplot.as_ref().ok_or_else(|| {
            CoreError::InvalidInput("no per-subject data to plot".into())
        })?;
        render_boxplot(summary).save_png(plot_path)?;
    }
    Ok(())
}

const PLOT_W: usize = 320;
const PLOT_H: usize = 400;

fn fill_rect(data: &mut Array3<f64>, y0: usize, y1: usize, x0: usize, x1: usize, rgb: [f64; 3]) {
    for y in y0..=y1.min(PLOT_H - 1) {
        for x in x0..=x1.min(PLOT_W - 1) {
            for c in 0..3 {
                data[[c, y, x]] = rgb[c];
            }
        }
    }
}

/// Deterministic single-box vertical boxplot with a [0, 1]-anchored axis.
pub fn render_boxplot(summary: &BoxplotSummary) -> ImageBuffer {
    let mut data = Array3::from_elem((3, PLOT_H, PLOT_W), 1.0);
    let top = 20usize;
    let bottom = PLOT_H - 20;
    let lo = summary.min.min(0.0);
    let hi = summary.max.max(1.0);
    let y_of = |v: f64| -> usize {
        let t = (hi - v) / (hi - lo);
        top + (t * (bottom - top) as f64).round() as usize
    };
    let axis_x = 48usize;
    let box_x0 = 120usize;
    let box_x1 = 240usize;
    let mid_x = (box_x0 + box_x1) / 2;
    let black = [0.0, 0.0, 0.0];
    let grey = [0.6, 0.6, 0.6];
    let red = [0.8, 0.1, 0.1];

    // Axis with ticks every 0.25 of the anchored range.
    fill_rect(&mut data, top, bottom, axis_x, axis_x, black);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = y_of(v);
        fill_rect(&mut data, y, y, axis_x - 6, axis_x, black);
        fill_rect(&mut data, y, y, axis_x + 1, PLOT_W - 20, grey);
    }

    // Whiskers, box, median.
    fill_rect(&mut data, y_of(summary.max), y_of(summary.q3), mid_x, mid_x, black);
    fill_rect(&mut data, y_of(summary.q1), y_of(summary.min), mid_x, mid_x, black);
    let cap = 24usize;
    for v in [summary.min, summary.max] {
        let y = y_of(v);
        fill_rect(&mut data, y, y, mid_x - cap, mid_x + cap, black);
    }
    let (bq3, bq1) = (y_of(summary.q3), y_of(summary.q1));
    fill_rect(&mut data, bq3, bq3, box_x0, box_x1, black);
    fill_rect(&mut data, bq1, bq1, box_x0, box_x1, black);
    fill_rect(&mut data, bq3, bq1, box_x0, box_x0, black);
    fill_rect(&mut data, bq3, bq1, box_x1, box_x1, black);
    let med = y_of(summary.median);
    fill_rect(&mut data, med.saturating_sub(1), med + 1, box_x0 + 1, box_x1 - 1, red);

    ImageBuffer::new(data).expect("plot buffer has valid shape")
}

/// CSV lines `subject,video,frame,true_label,p_spoof,decision`, probability
/// at six decimals.
pub fn write_scores(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let mut s = String::from("subject,video,frame,true_label,p_spoof,decision\n");
    for r in records {
        for field in [&r.subject_id, &r.video_id] {
            if field.contains(',') || field.contains('\n') {
                return Err(CoreError::InvalidInput(format!(
                    "field {field:?} cannot be written as CSV"
                )));
            }
        }
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.subject_id,
            r.video_id,
            r.frame_index,
            r.true_label,
            fmt_f64(r.p_spoof),
            r.decision
        );
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
        }
    }
    std::fs::write(path, s).map_err(|e| CoreError::io(path, e))
}

fn parse_label(s: &str, path: &Path, line: usize) -> Result<Label> {
    match s {
        "live" => Ok(Label::Live),
        "spoof" => Ok(Label::Spoof),
        other => Err(CoreError::json(path, format!("line {line}: bad label {other:?}"))),
    }
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "subject,video,frame,true_label,p_spoof,decision")) => {}
        other => {
            return Err(CoreError::json(
                path,
                format!("bad score header: {:?}", other.map(|(_, l)| l)),
            ));
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CoreError::json(path, format!("line {}: expected 6 fields", i + 1)));
        }
        let frame_index: u32 = fields[2]
            .parse()
            .map_err(|_| CoreError::json(path, format!("line {}: bad frame index", i + 1)))?;
        let p_spoof: f64 = fields[4]
            .parse()
            .map_err(|_| CoreError::json(path, format!("line {}: bad probability", i + 1)))?;
        records.push(ScoreRecord {
            subject_id: fields[0].to_string(),
            video_id: fields[1].to_string(),
            frame_index,
            true_label: parse_label(fields[3], path, i + 1)?,
            p_spoof,
            decision: parse_label(fields[5], path, i + 1)?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fas_nn::rng::seeded_rng;
    use rand::Rng;

    fn record(subject: &str, true_label: Label, p_spoof: f64) -> ScoreRecord {
        ScoreRecord {
            subject_id: subject.to_string(),
            video_id: "v000".into(),
            frame_index: 0,
            true_label,
            p_spoof,
            decision: decide(p_spoof, 0.5),
        }
    }

    fn random_records(rng: &mut impl Rng, n: usize, subjects: usize) -> Vec<ScoreRecord> {
        (0..n)
            .map(|i| {
                let label = if rng.random::<f64>() < 0.5 { Label::Live } else { Label::Spoof };
                let p = rng.random::<f64>();
                ScoreRecord {
                    subject_id: format!("s{}", rng.random_range(0..subjects)),
                    video_id: format!("v{:03}", i / 10),
                    frame_index: (i % 10) as u32,
                    true_label: label,
                    p_spoof: p,
                    decision: decide(p, 0.5),
                }
            })
            .collect()
    }

    #[test]
    fn confusion_matches_enumeration_and_boundaries() {
        let records = vec![
            record("a", Label::Live, 0.2),
            record("a", Label::Live, 0.9),
            record("a", Label::Spoof, 0.7),
            record("a", Label::Spoof, 0.1),
        ];
        let counts = confusion(&records, 0.5).unwrap();
        assert_eq!(
            counts,
            ConfusionCounts { tp_live: 1, fn_live: 1, tn_spoof: 1, fp_spoof: 1 }
        );

        // Threshold 0 classifies everything spoof; above 1, everything live.
        let all_spoof = confusion(&records, 0.0).unwrap();
        assert_eq!((all_spoof.tp_live, all_spoof.fp_spoof), (0, 0));
        assert_eq!((all_spoof.fn_live, all_spoof.tn_spoof), (2, 2));
        let all_live = confusion(&records, 1.0 + 1e-9).unwrap();
        assert_eq!((all_live.tp_live, all_live.fp_spoof), (2, 2));
        assert_eq!((all_live.fn_live, all_live.tn_spoof), (0, 0));

        assert!(confusion(&[], 0.5).is_err());
        assert!(confusion(&records, f64::NAN).is_err());
        let bad = vec![record("a", Label::Live, 1.5)];
        assert!(confusion(&bad, 0.5).is_err());
    }

    #[test]
    fn metrics_match_hand_examples() {
        // Published operating point: apcer 0.44, npcer 0.00, acer 0.22.
        let counts = ConfusionCounts { tp_live: 100, fn_live: 0, tn_spoof: 56, fp_spoof: 44 };
        let m = compute_metrics(&counts);
        assert_eq!(m.apcer, Rate::Defined(0.44));
        assert_eq!(m.npcer, Rate::Defined(0.0));
        assert_eq!(m.acer, Rate::Defined(0.22));
        assert_eq!(m.far, m.apcer);
        assert_eq!(m.frr, m.npcer);

        let counts = ConfusionCounts { tp_live: 9, fn_live: 1, tn_spoof: 6, fp_spoof: 4 };
        let m = compute_metrics(&counts);
        assert_eq!(m.accuracy, Rate::Defined(0.75));
        assert_eq!(m.frr, Rate::Defined(0.1));
        assert_eq!(m.far, Rate::Defined(0.4));
        assert_eq!(m.f1, Rate::Defined(18.0 / 23.0));

        let perfect = ConfusionCounts { tp_live: 5, fn_live: 0, tn_spoof: 5, fp_spoof: 0 };
        let m = compute_metrics(&perfect);
        assert_eq!(m.accuracy, Rate::Defined(1.0));
        assert_eq!(m.apcer, Rate::Defined(0.0));
        assert_eq!(m.npcer, Rate::Defined(0.0));
        assert_eq!(m.acer, Rate::Defined(0.0));
        assert_eq!(m.f1, Rate::Defined(1.0));
    }

    #[test]
    fn empty_classes_surface_as_undefined_markers() {
        let no_spoof = ConfusionCounts { tp_live: 3, fn_live: 1, tn_spoof: 0, fp_spoof: 0 };
        let m = compute_metrics(&no_spoof);
        assert_eq!(m.apcer, Rate::Undefined);
        assert_eq!(m.far, Rate::Undefined);
        assert_eq!(m.acer, Rate::Undefined);
        assert_eq!(m.npcer, Rate::Defined(0.25));

        let no_live = ConfusionCounts { tp_live: 0, fn_live: 0, tn_spoof: 4, fp_spoof: 0 };
        let m = compute_metrics(&no_live);
        assert_eq!(m.npcer, Rate::Undefined);
        assert_eq!(m.frr, Rate::Undefined);
        assert_eq!(m.acer, Rate::Undefined);
        // No live records and no accepted attacks: F1 has no support.
        assert_eq!(m.f1, Rate::Undefined);

        let m = compute_metrics(&ConfusionCounts::default());
        assert_eq!(m.accuracy, Rate::Undefined);
        assert!(m.accuracy.expect_defined("accuracy").is_err());
    }

    #[test]
    fn metrics_equal_brute_force_recount_on_random_sets() {
        let mut rng = seeded_rng(404);
        for _ in 0..1000 {
            let n = rng.random_range(1..=200);
            let records = random_records(&mut rng, n, 4);
            let threshold = rng.random::<f64>();
            let counts = confusion(&records, threshold).unwrap();
            let m = compute_metrics(&counts);

            let mut live = 0u64;
            let mut spoof = 0u64;
            let mut live_wrong = 0u64;
            let mut spoof_wrong = 0u64;
            let mut correct = 0u64;
            for r in &records {
                let d = if r.p_spoof >= threshold { Label::Spoof } else { Label::Live };
                match r.true_label {
                    Label::Live => {
                        live += 1;
                        if d == Label::Spoof {
                            live_wrong += 1;
                        } else {
                            correct += 1;
                        }
                    }
                    Label::Spoof => {
                        spoof += 1;
                        if d == Label::Live {
                            spoof_wrong += 1;
                        } else {
                            correct += 1;
                        }
                    }
                }
            }
            assert_eq!(counts.live_total(), live);
            assert_eq!(counts.spoof_total(), spoof);
            assert_eq!(counts.fn_live, live_wrong);
            assert_eq!(counts.fp_spoof, spoof_wrong);

            let check = |rate: Rate, num: u64, den: u64| match rate {
                Rate::Defined(v) => {
                    assert!(den > 0);
                    assert!((v - num as f64 / den as f64).abs() < 1e-12);
                }
                Rate::Undefined => assert_eq!(den, 0),
            };
            check(m.apcer, spoof_wrong, spoof);
            check(m.npcer, live_wrong, live);
            check(m.accuracy, correct, live + spoof);
            check(m.f1, 2 * (live - live_wrong), 2 * (live - live_wrong) + spoof_wrong + live_wrong);

            // acer is exactly the float mean, and matches the rational value.
            if let (Rate::Defined(a), Rate::Defined(np), Rate::Defined(ac)) =
                (m.apcer, m.npcer, m.acer)
            {
                assert_eq!(ac, (a + np) / 2.0);
                let rational =
                    (spoof_wrong * live + live_wrong * spoof) as f64 / (2 * spoof * live) as f64;
                assert!((ac - rational).abs() < 1e-12);
            } else {
                assert_eq!(m.acer, Rate::Undefined);
            }
        }
    }

    #[test]
    fn rates_ignore_correct_records_of_opposite_class() {
        let mut rng = seeded_rng(17);
        for _ in 0..100 {
            let n = rng.random_range(2..=60);
            let mut records = random_records(&mut rng, n, 3);
            let threshold = rng.random::<f64>();
            let before = compute_metrics(&confusion(&records, threshold).unwrap());

            // Correctly classified live frames cannot move apcer.
            for _ in 0..rng.random_range(1..=10) {
                let p = rng.random::<f64>() * threshold.max(1e-12) * 0.999;
                records.push(record("extra", Label::Live, p.min(1.0)));
            }
            let mid = compute_metrics(&confusion(&records, threshold).unwrap());
            assert_eq!(before.apcer, mid.apcer);

            // Correctly classified spoof frames cannot move npcer.
            for _ in 0..rng.random_range(1..=10) {
                let p = threshold + (1.0 - threshold) * rng.random::<f64>();
                records.push(record("extra", Label::Spoof, p.clamp(0.0, 1.0)));
            }
            let after = compute_metrics(&confusion(&records, threshold).unwrap());
            assert_eq!(mid.npcer, after.npcer);
        }
    }

    #[test]
    fn raising_threshold_moves_rates_one_way() {
        // Spoof wins at and above the threshold, so raising it can only
        // accept more attacks (apcer up) and reject fewer lives (npcer down).
        let mut rng = seeded_rng(23);
        for _ in 0..100 {
            let n = rng.random_range(4..=80);
            let records = random_records(&mut rng, n, 3);
            let (mut t1, mut t2) = (rng.random::<f64>(), rng.random::<f64>());
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            let m1 = compute_metrics(&confusion(&records, t1).unwrap());
            let m2 = compute_metrics(&confusion(&records, t2).unwrap());
            if let (Some(a1), Some(a2)) = (m1.apcer.value(), m2.apcer.value()) {
                assert!(a2 >= a1, "apcer fell {a1} -> {a2}");
            }
            if let (Some(n1), Some(n2)) = (m1.npcer.value(), m2.npcer.value()) {
                assert!(n2 <= n1, "npcer rose {n1} -> {n2}");
            }
        }
    }

    #[test]
    fn per_subject_accuracy_matches_enumeration() {
        let all_correct = vec![record("a", Label::Live, 0.1), record("a", Label::Spoof, 0.9)];
        let map = per_subject_accuracy(&all_correct).unwrap();
        assert_eq!(map["a"], 1.0);

        let records = vec![
            record("a", Label::Live, 0.1),
            record("a", Label::Live, 0.8),
            record("b", Label::Spoof, 0.9),
            record("b", Label::Live, 0.2),
        ];
        let map = per_subject_accuracy(&records).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map["a"], 0.5);
        assert_eq!(map["b"], 1.0);

        let mut big = Vec::new();
        for s in 0..90 {
            big.push(record(&format!("s{s:02}"), Label::Live, 0.1));
        }
        assert_eq!(per_subject_accuracy(&big).unwrap().len(), 90);
        assert!(per_subject_accuracy(&[]).is_err());
    }

    #[test]
    fn boxplot_reproduces_anchor_fixtures() {
        // Five-point fixture whose quartiles are its middle entries.
        let s = boxplot_summary(&[0.75, 0.3469, 0.9949, 0.6049, 0.9395]).unwrap();
        assert_eq!(s.min, 0.3469);
        assert_eq!(s.q1, 0.6049);
        assert_eq!(s.median, 0.75);
        assert_eq!(s.q3, 0.9395);
        assert_eq!(s.max, 0.9949);

        let s = boxplot_summary(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.q3, 3.25);

        let s = boxplot_summary(&[0.42]).unwrap();
        for v in [s.min, s.q1, s.median, s.q3, s.max] {
            assert_eq!(v, 0.42);
        }

        assert!(boxplot_summary(&[]).is_err());
        assert!(boxplot_summary(&[0.5, f64::NAN]).is_err());
    }

    #[test]
    fn boxplot_ordering_holds_for_random_inputs() {
        let mut rng = seeded_rng(31);
        for _ in 0..200 {
            let n = rng.random_range(1..=40);
            let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect();
            let s = boxplot_summary(&values).unwrap();
            assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        }
    }

    #[test]
    fn report_emission_is_bit_stable_and_parses_back() {
        let mut rng = seeded_rng(47);
        let records = random_records(&mut rng, 60, 4);
        let report = build_report(&records, 0.5).unwrap();
        assert_eq!(report.threshold, Some(0.5));
        assert!(report.boxplot.is_some());

        let dir = tempfile::tempdir().unwrap();
        let json_path = dir.path().join("report.json");
        emit_report(&report, ReportFormat::Json, &json_path, None).unwrap();
        let first = std::fs::read(&json_path).unwrap();
        emit_report(&report, ReportFormat::Json, &json_path, None).unwrap();
        assert_eq!(first, std::fs::read(&json_path).unwrap());

        // Parse-back equals the report at wire precision, and re-emitting the
        // parsed report reproduces the bytes.
        let text = String::from_utf8(first.clone()).unwrap();
        let parsed = report_from_json(&text, &json_path).unwrap();
        assert_eq!(parsed.counts, report.counts);
        let round6 = |v: f64| (v * 1e6).round() / 1e6;
        for (got, want) in [
            (parsed.accuracy, report.accuracy),
            (parsed.acer, report.acer),
            (parsed.apcer, report.apcer),
            (parsed.f1, report.f1),
        ] {
            match (got, want) {
                (Rate::Defined(g), Rate::Defined(w)) => assert_eq!(g, round6(w)),
                (g, w) => assert_eq!(g, w),
            }
        }
        assert_eq!(report_to_json(&parsed).into_bytes(), first);

        let csv_path = dir.path().join("per_subject.csv");
        emit_report(&report, ReportFormat::Csv, &csv_path, None).unwrap();
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        assert!(csv.starts_with("subject,accuracy\n"));
        assert_eq!(csv.lines().count(), 1 + report.per_subject.len());

        let plot_path = dir.path().join("box.png");
        emit_report(&report, ReportFormat::Json, &json_path, Some(&plot_path)).unwrap();
        let plot_first = std::fs::read(&plot_path).unwrap();
        emit_report(&report, ReportFormat::Json, &json_path, Some(&plot_path)).unwrap();
        assert_eq!(plot_first, std::fs::read(&plot_path).unwrap());
        let img = ImageBuffer::load_png(&plot_path).unwrap();
        assert_eq!((img.height(), img.width()), (PLOT_H, PLOT_W));

        let bad = dir.path().join("missing-dir-as-file/report.json");
        std::fs::write(dir.path().join("missing-dir-as-file"), b"x").unwrap();
        assert!(emit_report(&report, ReportFormat::Json, &bad, None).is_err());
    }

    #[test]
    fn undefined_rates_serialize_as_markers() {
        let m = compute_metrics(&ConfusionCounts { tp_live: 2, fn_live: 0, tn_spoof: 0, fp_spoof: 0 });
        let text = report_to_json(&m);
        assert!(text.contains("\"apcer\": \"undefined\""));
        assert!(text.contains("\"boxplot\": null"));
        let parsed = report_from_json(&text, Path::new("mem")).unwrap();
        assert_eq!(parsed.apcer, Rate::Undefined);
        assert_eq!(parsed.acer, Rate::Undefined);
        assert_eq!(parsed.npcer, Rate::Defined(0.0));
    }

    #[test]
    fn score_csv_round_trips() {
        // Probabilities chosen to be exact at six decimals.
        let records = vec![
            ScoreRecord {
                subject_id: "s1".into(),
                video_id: "a__v001".into(),
                frame_index: 3,
                true_label: Label::Live,
                p_spoof: 0.25,
                decision: Label::Live,
            },
            ScoreRecord {
                subject_id: "s2".into(),
                video_id: "b__v002".into(),
                frame_index: 11,
                true_label: Label::Spoof,
                p_spoof: 0.8125,
                decision: Label::Spoof,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        write_scores(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("subject,video,frame,true_label,p_spoof,decision\n"));
        assert!(text.contains("s1,a__v001,3,live,0.250000,live"));
        let back = read_scores(&path).unwrap();
        assert_eq!(back, records);

        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(read_scores(&path).is_err());
        std::fs::write(&path, "subject,video,frame,true_label,p_spoof,decision\ns,v,0,alive,0.5,live\n").unwrap();
        assert!(read_scores(&path).is_err());
    }

    #[test]
    fn threshold_sweep_is_monotone_in_each_rate() {
        let mut rng = seeded_rng(59);
        let records = random_records(&mut rng, 120, 3);
        let thresholds = [0.0, 0.25, 0.5, 0.75, 1.0];
        let sweep = threshold_sweep(&records, &thresholds).unwrap();
        assert_eq!(sweep.len(), 5);
        for pair in sweep.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            assert!(b.apcer.value().unwrap() >= a.apcer.value().unwrap());
            assert!(b.npcer.value().unwrap() <= a.npcer.value().unwrap());
        }
        assert_eq!(sweep[0].threshold, Some(0.0));
    }
}
