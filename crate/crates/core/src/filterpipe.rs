//! Two-stage dataset filtering.
//!
//! Stage one drops samples whose valid-pixel ratio is below a threshold
//! (strictly). Stage two ranks the survivors by distribution score and by
//! gradient score, and drops the bottom `cut_fraction` of each ranking; the
//! two cuts are taken on the same survivor pool and their union is removed.
//! A sequential mode (second cut re-ranked on the first cut's survivors) is
//! available behind [`FilterPolicy::sequential`].
//!
//! Scoring is parallel across samples; every aggregate is an
//! order-independent reduction followed by canonical sorting by id, so
//! parallel runs are byte-identical to serial runs.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depthio::{load_depth, ManifestEntry};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::quality::{score_sample, QualityScores, ScoreOptions};

/// How percentile cuts are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    PerDataset,
    Global,
}

impl std::fmt::Display for Grouping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Grouping::PerDataset => write!(f, "per_dataset"),
            Grouping::Global => write!(f, "global"),
        }
    }
}

/// Which score a percentile cut ranks by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutMetric {
    Dist,
    Grad,
}

/// Filtering thresholds and histogram settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub valid_ratio_min: f64,
    pub cut_fraction: f64,
    pub grouping: Grouping,
    /// Re-rank the gradient cut on the distribution cut's survivors instead
    /// of cutting both from the same pool.
    pub sequential: bool,
    pub score: ScoreOptions,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            valid_ratio_min: 0.2,
            cut_fraction: 0.2,
            grouping: Grouping::PerDataset,
            sequential: false,
            score: ScoreOptions::default(),
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.valid_ratio_min) {
            return Err(Error::Config("valid_ratio_min must be in [0,1]".into()));
        }
        if !(0.0..1.0).contains(&self.cut_fraction) {
            return Err(Error::Config("cut_fraction must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Why a sample was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    ValidRatio,
    LowDist,
    LowGrad,
    LowDistGrad,
    Degenerate,
    LoadError,
}

impl DropReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::ValidRatio => "valid_ratio",
            DropReason::LowDist => "low_s_dist",
            DropReason::LowGrad => "low_s_grad",
            DropReason::LowDistGrad => "low_s_dist+low_s_grad",
            DropReason::Degenerate => "degenerate",
            DropReason::LoadError => "load_error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "valid_ratio" => Some(DropReason::ValidRatio),
            "low_s_dist" => Some(DropReason::LowDist),
            "low_s_grad" => Some(DropReason::LowGrad),
            "low_s_dist+low_s_grad" => Some(DropReason::LowDistGrad),
            "degenerate" => Some(DropReason::Degenerate),
            "load_error" => Some(DropReason::LoadError),
            _ => None,
        }
    }
}

/// One audited sample: its scores plus the filtering verdict.
#[derive(Debug, Clone)]
pub struct AuditRow {
    pub scores: QualityScores,
    pub kept: bool,
    pub drop: Option<DropReason>,
    pub error: Option<String>,
}

/// Per-dataset tallies and score means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub total: u64,
    pub good: u64,
    pub bad: u64,
    pub mean_s_dist: f64,
    pub mean_s_grad: f64,
    pub mean_s_total: f64,
}

/// Good/bad tallies per dataset plus an overall summary row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    pub policy: FilterPolicy,
    pub rows: Vec<ReportRow>,
    pub summary: ReportRow,
}

/// Stage one: kept iff `valid_ratio >= threshold` (drop is strict `<`).
pub fn valid_ratio_cut(scores: &[QualityScores], threshold: f64) -> Vec<bool> {
    scores.iter().map(|s| s.valid_ratio >= threshold).collect()
}

fn metric_value(s: &QualityScores, metric: CutMetric) -> f64 {
    match metric {
        CutMetric::Dist => s.s_dist,
        CutMetric::Grad => s.s_grad,
    }
}

/// Stage two: within each group, drops the `floor(fraction * n)` entries with
/// the lowest metric value. Ties break by id so the partition is
/// order-independent. Returns kept flags over the input slice.
pub fn percentile_cut(
    scores: &[QualityScores],
    metric: CutMetric,
    fraction: f64,
    grouping: Grouping,
) -> Vec<bool> {
    let mut kept = vec![true; scores.len()];
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, s) in scores.iter().enumerate() {
        let key = match grouping {
            Grouping::PerDataset => s.dataset.as_str(),
            Grouping::Global => "",
        };
        groups.entry(key).or_default().push(i);
    }
    for indices in groups.values() {
        let mut order: Vec<usize> = indices.clone();
        order.sort_by(|&a, &b| {
            let va = metric_value(&scores[a], metric);
            let vb = metric_value(&scores[b], metric);
            // NaN sorts lowest so unscored entries are cut first
            let ka = if va.is_nan() { f64::NEG_INFINITY } else { va };
            let kb = if vb.is_nan() { f64::NEG_INFINITY } else { vb };
            ka.total_cmp(&kb).then_with(|| scores[a].id.cmp(&scores[b].id))
        });
        let drop_count = (fraction * order.len() as f64).floor() as usize;
        for &i in order.iter().take(drop_count) {
            kept[i] = false;
        }
    }
    kept
}

/// Applies the full policy to a score list. Returns, per entry, whether it is
/// kept and why it was dropped.
pub fn apply_policy(
    scores: &[QualityScores],
    policy: &FilterPolicy,
) -> Result<Vec<(bool, Option<DropReason>)>> {
    policy.validate()?;
    let ratio_kept = valid_ratio_cut(scores, policy.valid_ratio_min);
    let mut verdict: Vec<(bool, Option<DropReason>)> = Vec::with_capacity(scores.len());
    // pool = ratio survivors with finite scores
    let mut pool_idx: Vec<usize> = Vec::new();
    for (i, s) in scores.iter().enumerate() {
        if !ratio_kept[i] {
            verdict.push((false, Some(DropReason::ValidRatio)));
        } else if !s.s_dist.is_finite() || !s.s_grad.is_finite() {
            verdict.push((false, Some(DropReason::Degenerate)));
        } else {
            verdict.push((true, None));
            pool_idx.push(i);
        }
    }
    let pool: Vec<QualityScores> = pool_idx.iter().map(|&i| scores[i].clone()).collect();

    let (dist_kept, grad_kept) = if policy.sequential {
        let dist_kept = percentile_cut(&pool, CutMetric::Dist, policy.cut_fraction, policy.grouping);
        let second: Vec<QualityScores> = pool
            .iter()
            .zip(&dist_kept)
            .filter_map(|(s, &k)| k.then(|| s.clone()))
            .collect();
        let second_kept =
            percentile_cut(&second, CutMetric::Grad, policy.cut_fraction, policy.grouping);
        let mut grad_kept = vec![true; pool.len()];
        let mut j = 0;
        for (i, &dk) in dist_kept.iter().enumerate() {
            if dk {
                grad_kept[i] = second_kept[j];
                j += 1;
            }
        }
        (dist_kept, grad_kept)
    } else {
        (
            percentile_cut(&pool, CutMetric::Dist, policy.cut_fraction, policy.grouping),
            percentile_cut(&pool, CutMetric::Grad, policy.cut_fraction, policy.grouping),
        )
    };

    for (j, &i) in pool_idx.iter().enumerate() {
        let reason = match (dist_kept[j], grad_kept[j]) {
            (true, true) => None,
            (false, true) => Some(DropReason::LowDist),
            (true, false) => Some(DropReason::LowGrad),
            (false, false) => Some(DropReason::LowDistGrad),
        };
        verdict[i] = (reason.is_none(), reason);
    }
    Ok(verdict)
}

fn nan_scores(id: &str, dataset: &str, valid_ratio: f64) -> QualityScores {
    QualityScores {
        id: id.to_string(),
        dataset: dataset.to_string(),
        valid_ratio,
        s_chi2: f64::NAN,
        s_conc: f64::NAN,
        s_range: f64::NAN,
        s_dist: f64::NAN,
        s_grad: f64::NAN,
        s_total: f64::NAN,
    }
}

/// Loads and scores every manifest entry (in parallel), applies the policy,
/// and builds the per-dataset report. Unreadable samples become error rows;
/// the run fails only if every sample errors.
pub fn audit(
    entries: &[ManifestEntry],
    far_plane: f64,
    policy: &FilterPolicy,
) -> Result<(Vec<AuditRow>, FilterReport)> {
    policy.validate()?;
    if entries.is_empty() {
        return Err(Error::DegenerateInput("empty manifest".into()));
    }
    let scored: Vec<(QualityScores, Option<String>)> = entries
        .par_iter()
        .map(|entry| match load_depth::<f64>(entry, far_plane) {
            Ok(sample) => match score_sample(&sample, &policy.score) {
                Ok(scores) => (scores, None),
                // no valid pixels: keep the true ratio (0), scores unavailable
                Err(_) => (nan_scores(&entry.id, &entry.dataset, 0.0), None),
            },
            Err(e) => (
                nan_scores(&entry.id, &entry.dataset, f64::NAN),
                Some(e.to_string()),
            ),
        })
        .collect();
    if scored.iter().all(|(_, err)| err.is_some()) {
        return Err(Error::DegenerateInput(
            "every sample in the manifest failed to load".into(),
        ));
    }

    let mut rows = finalize_rows(scored, policy)?;
    rows.sort_by(|a, b| a.scores.id.cmp(&b.scores.id));
    let report = build_report(&rows, policy);
    Ok((rows, report))
}

/// Applies the policy to pre-computed scores (for example re-filtering a
/// scores CSV with different thresholds).
pub fn filter_scores(
    scored: Vec<QualityScores>,
    policy: &FilterPolicy,
) -> Result<(Vec<AuditRow>, FilterReport)> {
    let mut rows = finalize_rows(scored.into_iter().map(|s| (s, None)).collect(), policy)?;
    rows.sort_by(|a, b| a.scores.id.cmp(&b.scores.id));
    let report = build_report(&rows, policy);
    Ok((rows, report))
}

fn finalize_rows(
    scored: Vec<(QualityScores, Option<String>)>,
    policy: &FilterPolicy,
) -> Result<Vec<AuditRow>> {
    let ok_idx: Vec<usize> = (0..scored.len())
        .filter(|&i| scored[i].1.is_none())
        .collect();
    let ok_scores: Vec<QualityScores> = ok_idx.iter().map(|&i| scored[i].0.clone()).collect();
    let verdict = apply_policy(&ok_scores, policy)?;

    let mut rows: Vec<AuditRow> = scored
        .into_iter()
        .map(|(scores, error)| AuditRow {
            scores,
            kept: false,
            drop: error.as_ref().map(|_| DropReason::LoadError),
            error,
        })
        .collect();
    for (j, &i) in ok_idx.iter().enumerate() {
        rows[i].kept = verdict[j].0;
        rows[i].drop = verdict[j].1;
    }
    Ok(rows)
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0u64;
    for v in values {
        if v.is_finite() {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn tally(dataset: &str, rows: &[&AuditRow]) -> ReportRow {
    let good = rows.iter().filter(|r| r.kept).count() as u64;
    ReportRow {
        dataset: dataset.to_string(),
        total: rows.len() as u64,
        good,
        bad: rows.len() as u64 - good,
        mean_s_dist: mean_of(rows.iter().map(|r| r.scores.s_dist)),
        mean_s_grad: mean_of(rows.iter().map(|r| r.scores.s_grad)),
        mean_s_total: mean_of(rows.iter().map(|r| r.scores.s_total)),
    }
}

/// Builds the per-dataset report, rows sorted by dataset name, summary last.
pub fn build_report(rows: &[AuditRow], policy: &FilterPolicy) -> FilterReport {
    let mut by_dataset: HashMap<&str, Vec<&AuditRow>> = HashMap::new();
    for row in rows {
        by_dataset.entry(row.scores.dataset.as_str()).or_default().push(row);
    }
    let mut datasets: Vec<&str> = by_dataset.keys().copied().collect();
    datasets.sort_unstable();
    let report_rows: Vec<ReportRow> = datasets
        .iter()
        .map(|d| tally(d, &by_dataset[d]))
        .collect();
    let all: Vec<&AuditRow> = rows.iter().collect();
    FilterReport {
        policy: policy.clone(),
        rows: report_rows,
        summary: tally("Summary", &all),
    }
}

/// Output format for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Writes the report. CSV carries the policy in a leading comment line;
/// JSON embeds it as a field.
pub fn emit_report<W: Write>(report: &FilterReport, format: ReportFormat, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<report>", e);
    match format {
        ReportFormat::Csv => {
            let p = &report.policy;
            let range = match p.score.range {
                crate::quality::HistogramRange::Fixed { lo, hi } => format!("fixed[{lo},{hi}]"),
                crate::quality::HistogramRange::PerSample => "per_sample".to_string(),
            };
            writeln!(
                w,
                "# valid_ratio_min={} cut_fraction={} grouping={} sequential={} k={} range={}",
                p.valid_ratio_min, p.cut_fraction, p.grouping, p.sequential, p.score.k, range
            )
            .map_err(io)?;
            writeln!(w, "dataset,total,good,bad,mean_s_dist,mean_s_grad,mean_s_total").map_err(io)?;
            for row in report.rows.iter().chain(std::iter::once(&report.summary)) {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    row.dataset,
                    row.total,
                    row.good,
                    row.bad,
                    sig9(row.mean_s_dist),
                    sig9(row.mean_s_grad),
                    sig9(row.mean_s_total)
                )
                .map_err(io)?;
            }
        }
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, report)
                .map_err(|e| Error::Format(format!("report encode: {e}")))?;
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Scores CSV header, fixed column order.
pub const SCORES_HEADER: &str =
    "id,dataset,valid_ratio,s_chi2,s_conc,s_range,s_dist,s_grad,s_total,kept,drop_reason";

/// Writes the per-sample scores CSV. Unavailable scores are empty fields.
pub fn write_scores_csv<W: Write>(rows: &[AuditRow], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<scores>", e);
    writeln!(w, "{SCORES_HEADER}").map_err(io)?;
    for row in rows {
        let s = &row.scores;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.id,
            s.dataset,
            sig9(s.valid_ratio),
            sig9(s.s_chi2),
            sig9(s.s_conc),
            sig9(s.s_range),
            sig9(s.s_dist),
            sig9(s.s_grad),
            sig9(s.s_total),
            row.kept,
            row.drop.map(|d| d.as_str()).unwrap_or("")
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a scores CSV back (verdict columns are ignored; the policy is
/// re-applied by the caller).
pub fn read_scores_csv<R: Read>(reader: R) -> Result<Vec<QualityScores>> {
    let r = BufReader::new(reader);
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<scores>", e))?;
        if idx == 0 {
            if !line.starts_with("id,") {
                return Err(Error::Format("scores csv: missing header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Format(format!(
                "scores csv line {}: expected 11 fields, got {}",
                idx + 1,
                fields.len()
            )));
        }
        let num = |f: &str| -> f64 {
            if f.is_empty() {
                f64::NAN
            } else {
                f.parse().unwrap_or(f64::NAN)
            }
        };
        out.push(QualityScores {
            id: fields[0].to_string(),
            dataset: fields[1].to_string(),
            valid_ratio: num(fields[2]),
            s_chi2: num(fields[3]),
            s_conc: num(fields[4]),
            s_range: num(fields[5]),
            s_dist: num(fields[6]),
            s_grad: num(fields[7]),
            s_total: num(fields[8]),
        });
    }
    Ok(out)
}
