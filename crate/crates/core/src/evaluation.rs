//! Metrics (Spearman's rho, mean absolute deviation, composite bias, answer
//! rate), per-round reports, ablation configs and audits, and rank-map export.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agents::Score;
use crate::backend::AgentRole;
use crate::config::{RunConfig, Variant};
use crate::dataset::Dataset;
use crate::orchestrator::{
    check_fingerprint, load_snapshot, read_calls, read_refsets, refsets_file, round_file, RoundState, RunError,
    CALLS_FILE,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("round file {0} is missing")]
    MissingRound(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("rank map: {0}")]
    RankMap(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Spearman's rho, or a marker that one side has no rank variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    Defined(f64),
    Degenerate,
}

impl Rho {
    pub fn value(self) -> Option<f64> {
        match self {
            Rho::Defined(r) => Some(r),
            Rho::Degenerate => None,
        }
    }
}

/// 1-based ranks, ties sharing the mean of the positions they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]].total_cmp(&v[order[i]]) == Ordering::Equal {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Rho {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Rho::Degenerate;
    }
    Rho::Defined((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Rho, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooFew { needed: 2, got: x.len() });
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Mean absolute deviation about the mean.
pub fn mad(v: &[f64]) -> Result<f64, MetricError> {
    if v.is_empty() {
        return Err(MetricError::TooFew { needed: 1, got: 0 });
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    Ok(v.iter().map(|x| (x - mean).abs()).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bias {
    pub value: f64,
    /// Rho was undefined (fewer than two answers, or no rank variance).
    pub degenerate: bool,
}

/// `rho(y_hat, d) * MAD(y_hat) * a^2` over the answered points.
pub fn bias(predictions: &[Score], anchor: &[f64], answer_rate: f64) -> Result<Bias, MetricError> {
    if predictions.len() != anchor.len() {
        return Err(MetricError::LengthMismatch(predictions.len(), anchor.len()));
    }
    let (yhat, d): (Vec<f64>, Vec<f64>) =
        predictions.iter().zip(anchor).filter_map(|(s, a)| s.as_f64().map(|v| (v, *a))).unzip();
    if yhat.len() < 2 {
        return Ok(Bias { value: 0.0, degenerate: true });
    }
    match spearman(&yhat, &d)? {
        Rho::Degenerate => Ok(Bias { value: 0.0, degenerate: true }),
        Rho::Defined(rho) => Ok(Bias { value: rho * mad(&yhat)? * answer_rate * answer_rate, degenerate: false }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub round: usize,
    /// Zero when undefined; see `spearman_degenerate`.
    pub spearman: f64,
    pub spearman_degenerate: bool,
    pub bias: f64,
    pub bias_degenerate: bool,
    pub mad: f64,
    pub answer_rate: f64,
    pub n_total: usize,
    pub n_answered: usize,
}

/// Scores one round against the dataset's targets and anchor.
pub fn evaluate_round(state: &RoundState, dataset: &Dataset) -> EvaluationReport {
    let n_total = state.scores.len();
    let (yhat, y): (Vec<f64>, Vec<f64>) =
        state.scores.iter().zip(dataset.targets()).filter_map(|(s, t)| s.as_f64().map(|v| (v, *t))).unzip();
    let n_answered = yhat.len();
    let answer_rate = if n_total == 0 { 0.0 } else { n_answered as f64 / n_total as f64 };
    let rho = spearman(&yhat, &y).ok().and_then(Rho::value);
    let b = bias(&state.scores, dataset.anchor(), answer_rate).expect("scores are aligned with the dataset");
    EvaluationReport {
        round: state.round,
        spearman: rho.unwrap_or(0.0),
        spearman_degenerate: rho.is_none(),
        bias: b.value,
        bias_degenerate: b.degenerate,
        mad: mad(&yhat).unwrap_or(0.0),
        answer_rate,
        n_total,
        n_answered,
    }
}

/// One report per round `0..=rounds` of a finished run.
pub fn evaluate_run(run_dir: &Path, dataset: &Dataset) -> Result<Vec<EvaluationReport>, EvalError> {
    check_fingerprint(run_dir, dataset)?;
    let config = load_snapshot(run_dir)?;
    (0..=config.rounds)
        .map(|k| {
            let path = run_dir.join(round_file(k));
            if !path.is_file() {
                return Err(EvalError::MissingRound(path.display().to_string()));
            }
            Ok(evaluate_round(&RoundState::read(&path, k, dataset)?, dataset))
        })
        .collect()
}

/// `round,spearman,bias,mad,answer_rate,n_total,n_answered`.
pub fn reports_to_csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("round,spearman,bias,mad,answer_rate,n_total,n_answered\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round, r.spearman, r.bias, r.mad, r.answer_rate, r.n_total, r.n_answered
        );
    }
    out
}

pub fn reports_table(reports: &[EvaluationReport]) -> String {
    let mut out =
        format!("{:>5}  {:>9}  {:>9}  {:>7}  {:>7}  {:>9}\n", "round", "spearman", "bias", "mad", "answer", "answered");
    for r in reports {
        let flag = |d: bool| if d { "*" } else { " " };
        let _ = writeln!(
            out,
            "{:>5}  {:>8.4}{}  {:>8.4}{}  {:>7.4}  {:>7.3}  {:>4}/{:<4}",
            r.round,
            r.spearman,
            flag(r.spearman_degenerate),
            r.bias,
            flag(r.bias_degenerate),
            r.mad,
            r.answer_rate,
            r.n_answered,
            r.n_total
        );
    }
    if reports.iter().any(|r| r.spearman_degenerate || r.bias_degenerate) {
        out.push_str("* undefined (no rank variance or fewer than two answers), reported as 0\n");
    }
    out
}

/// `base` with one input channel switched off.
pub fn ablation_config(base: &RunConfig, variant: Variant) -> RunConfig {
    RunConfig { variant, ..base.clone() }
}

static COVARIATE_CODE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bbio\d{1,2}\b").unwrap());

/// What a finished run's files say about which channels were used.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ChannelAudit {
    pub refset_rows: usize,
    pub rows_with_mandatory: usize,
    pub rows_with_extra: usize,
    pub variable_select_calls: usize,
    pub point_select_calls: usize,
    /// Predict and refine prompts that mention a covariate code.
    pub prompts_with_covariates: usize,
}

impl ChannelAudit {
    /// Checks that exactly the channel `variant` disables is silent.
    pub fn check(&self, variant: Variant) -> Result<(), String> {
        match variant {
            Variant::NoNear10 if self.rows_with_mandatory > 0 => {
                Err(format!("{} refset rows still carry mandatory neighbours", self.rows_with_mandatory))
            }
            Variant::NoPtsel if self.rows_with_extra > 0 || self.point_select_calls > 0 => Err(format!(
                "{} refset rows carry extra points and {} point-selection calls were made",
                self.rows_with_extra, self.point_select_calls
            )),
            Variant::NoExtvars if self.prompts_with_covariates > 0 || self.variable_select_calls > 0 => Err(format!(
                "{} prompts mention covariates and {} variable-selection calls were made",
                self.prompts_with_covariates, self.variable_select_calls
            )),
            _ => Ok(()),
        }
    }
}

pub fn audit_run(run_dir: &Path) -> Result<ChannelAudit, EvalError> {
    let config = load_snapshot(run_dir)?;
    let mut audit = ChannelAudit::default();
    for k in 1..=config.rounds {
        let path = run_dir.join(refsets_file(k));
        if !path.is_file() {
            continue;
        }
        for r in read_refsets(&path)?.values() {
            audit.refset_rows += 1;
            audit.rows_with_mandatory += usize::from(!r.mandatory.is_empty());
            audit.rows_with_extra += usize::from(!r.extra.is_empty());
        }
    }
    for c in read_calls(&run_dir.join(CALLS_FILE))? {
        match c.role {
            AgentRole::VariableSelect => audit.variable_select_calls += 1,
            AgentRole::PointSelect => audit.point_select_calls += 1,
            AgentRole::Predict | AgentRole::Refine => {
                audit.prompts_with_covariates += usize::from(COVARIATE_CODE.is_match(&c.prompt));
            }
        }
    }
    Ok(audit)
}

/// One row of a rank map. Refused points carry no score or percentile.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMapRow {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub score: Option<f64>,
    pub rank_percentile: Option<f64>,
    pub refused: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    GeoJson,
}

impl std::str::FromStr for MapFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(MapFormat::Csv),
            "geojson" | "json" => Ok(MapFormat::GeoJson),
            _ => Err(format!("unknown map format {s:?} (expected csv or geojson)")),
        }
    }
}

/// Rows sorted by id; percentile `(avg_rank - 0.5) / n * 100` over answered points.
pub fn rank_map(state: &RoundState, dataset: &Dataset) -> Vec<RankMapRow> {
    let answered: Vec<(usize, f64)> =
        state.scores.iter().enumerate().filter_map(|(i, s)| s.as_f64().map(|v| (i, v))).collect();
    let values: Vec<f64> = answered.iter().map(|(_, v)| *v).collect();
    let ranks = average_ranks(&values);
    let n = values.len() as f64;
    let mut pct: BTreeMap<usize, f64> = BTreeMap::new();
    for ((i, _), r) in answered.iter().zip(ranks) {
        pct.insert(*i, (r - 0.5) / n * 100.0);
    }
    let mut rows: Vec<RankMapRow> = dataset
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| RankMapRow {
            id: p.id().to_string(),
            lat: p.lat(),
            lon: p.lon(),
            score: state.scores[i].as_f64(),
            rank_percentile: pct.get(&i).copied(),
            refused: state.scores[i].is_refused(),
        })
        .collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_rank_map<W: Write>(rows: &[RankMapRow], format: MapFormat, mut out: W) -> Result<(), EvalError> {
    match format {
        MapFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["id", "lat", "lon", "score", "rank_percentile", "refused"])
                .map_err(|e| EvalError::RankMap(e.to_string()))?;
            for r in rows {
                w.write_record([
                    r.id.clone(),
                    r.lat.to_string(),
                    r.lon.to_string(),
                    opt(r.score),
                    opt(r.rank_percentile),
                    r.refused.to_string(),
                ])
                .map_err(|e| EvalError::RankMap(e.to_string()))?;
            }
            w.flush()?;
        }
        MapFormat::GeoJson => {
            let features: Vec<_> = rows
                .iter()
                .map(|r| {
                    json!({
                        "type": "Feature",
                        "geometry": {"type": "Point", "coordinates": [r.lon, r.lat]},
                        "properties": {
                            "id": r.id,
                            "score": r.score,
                            "rank_percentile": r.rank_percentile,
                            "refused": r.refused,
                        },
                    })
                })
                .collect();
            let doc = json!({"type": "FeatureCollection", "features": features});
            serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| EvalError::RankMap(e.to_string()))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Exports round `round` of a run as a rank map.
pub fn export_rank_map<W: Write>(
    run_dir: &Path,
    round: usize,
    dataset: &Dataset,
    format: MapFormat,
    out: W,
) -> Result<(), EvalError> {
    let path = run_dir.join(round_file(round));
    if !path.is_file() {
        return Err(EvalError::MissingRound(path.display().to_string()));
    }
    let state = RoundState::read(&path, round, dataset)?;
    write_rank_map(&rank_map(&state, dataset), format, out)
}

pub fn read_rank_map_csv(text: &str) -> Result<Vec<RankMapRow>, EvalError> {
    let bad = |m: String| EvalError::RankMap(m);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<Option<f64>, EvalError> {
            let cell = rec.get(i).unwrap_or_default();
            if cell.is_empty() {
                Ok(None)
            } else {
                cell.parse().map(Some).map_err(|_| bad(format!("bad number {cell:?}")))
            }
        };
        rows.push(RankMapRow {
            id: rec.get(0).unwrap_or_default().to_string(),
            lat: num(1)?.ok_or_else(|| bad("missing lat".into()))?,
            lon: num(2)?.ok_or_else(|| bad("missing lon".into()))?,
            score: num(3)?,
            rank_percentile: num(4)?,
            refused: rec.get(5) == Some("true"),
        });
    }
    Ok(rows)
}

pub fn read_rank_map_geojson(text: &str) -> Result<Vec<RankMapRow>, EvalError> {
    let bad = |m: &str| EvalError::RankMap(m.to_string());
    let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| EvalError::RankMap(e.to_string()))?;
    let features = doc["features"].as_array().ok_or_else(|| bad("no features array"))?;
    features
        .iter()
        .map(|f| {
            let c = &f["geometry"]["coordinates"];
            let p = &f["properties"];
            Ok(RankMapRow {
                id: p["id"].as_str().ok_or_else(|| bad("feature without id"))?.to_string(),
                lon: c[0].as_f64().ok_or_else(|| bad("bad longitude"))?,
                lat: c[1].as_f64().ok_or_else(|| bad("bad latitude"))?,
                score: p["score"].as_f64(),
                rank_percentile: p["rank_percentile"].as_f64(),
                refused: p["refused"].as_bool().ok_or_else(|| bad("feature without refused flag"))?,
            })
        })
        .collect()
}
