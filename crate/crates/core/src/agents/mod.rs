//! The four agents: predict, variable selection, point selection and refine.
//! Each renders a prompt, sends it with a matching structured payload, and
//! parses the reply into a typed result.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::backend::{
    AgentRole, Backend, BackendError, BackendRequest, MenuEntry, Payload, PointRef, ReferencePayload,
};
use crate::context::ContextBlock;
use crate::covariates::{CovariateCode, CovariateRegistry, CovariateRow};
use crate::geo::GeoPoint;
use crate::index::SpatialIndex;

pub mod parse;
mod score;
pub mod templates;

pub use parse::{parse_points, parse_refine, parse_score, parse_variables, Parsed, RefineDecision};
pub use score::{Score, ScoreValue, REFUSED_TOKEN};
pub use templates::{PromptTemplates, Template, TemplateError};

/// What is being predicted, and what the ends of the 0.0–9.9 scale mean.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskContext {
    pub topic: String,
    pub scale_hint: String,
}

impl Default for TaskContext {
    fn default() -> Self {
        Self {
            topic: "population density".into(),
            scale_hint: "0.0 is the lowest value found anywhere in the world and 9.9 the highest.".into(),
        }
    }
}

impl TaskContext {
    pub fn validate(&self) -> Result<(), String> {
        if self.topic.trim().is_empty() {
            return Err("task topic must not be empty".into());
        }
        Ok(())
    }
}

/// References for one target: its nearest neighbours plus agent-chosen
/// farther points. The two lists are disjoint and never contain the target.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub mandatory: Vec<String>,
    pub extra: Vec<String>,
}

impl ReferenceSet {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.mandatory.iter().chain(&self.extra).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.mandatory.len() + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One reference as the refine agent sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceInput {
    pub id: String,
    pub distance_km: f64,
    /// Score from the previous round's snapshot.
    pub score: Score,
    pub covariates: CovariateRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointSelectOptions {
    pub k_near: usize,
    pub p_far: usize,
    pub menu_size: usize,
    /// Include the `k_near` nearest neighbours as mandatory references.
    pub mandatory: bool,
    /// Ask the agent for farther points.
    pub agent: bool,
}

/// Distances shown in prompts and payloads, to one decimal.
fn round_km(d: f64) -> f64 {
    (d * 10.0).round() / 10.0
}

fn point_ref(p: &GeoPoint) -> PointRef {
    PointRef { id: p.id().to_string(), lat: p.lat(), lon: p.lon() }
}

fn covariate_map(row: &CovariateRow) -> BTreeMap<String, f64> {
    row.iter().map(|(c, v)| (c.to_string(), v)).collect()
}

fn covariate_inline(row: &CovariateRow) -> String {
    row.iter().map(|(c, v)| format!("{c} = {v} {}", c.entry().unit)).collect::<Vec<_>>().join(", ")
}

/// Agents bound to one backend and one round.
pub struct Agents<'a> {
    backend: &'a dyn Backend,
    templates: &'a PromptTemplates,
    round: usize,
}

impl<'a> Agents<'a> {
    pub fn new(backend: &'a dyn Backend, templates: &'a PromptTemplates, round: usize) -> Self {
        Self { backend, templates, round }
    }

    fn base_values(point: &GeoPoint, task: &TaskContext) -> HashMap<&'static str, String> {
        HashMap::from([
            ("topic", task.topic.clone()),
            ("scale_hint", task.scale_hint.clone()),
            ("id", point.id().to_string()),
            ("lat", point.lat().to_string()),
            ("lon", point.lon().to_string()),
        ])
    }

    /// Sends a request. Fatal errors propagate; anything else is logged and
    /// reported as `None` so the caller can fall back.
    fn call(&self, point: &GeoPoint, prompt: String, payload: Payload) -> Result<Option<String>, BackendError> {
        let role = payload.role();
        let request = BackendRequest::new(format!("r{}-{}-{}", self.round, role, point.id()), prompt, payload);
        match self.backend.invoke(&request) {
            Ok(r) => Ok(Some(r.text)),
            Err(e) if e.is_fatal() => Err(e),
            Err(e) => {
                log::warn!("{}: {e}; using fallback", request.request_id);
                Ok(None)
            }
        }
    }

    fn note(&self, role: AgentRole, point: &GeoPoint, notes: &[String]) {
        for n in notes {
            log::warn!("r{}-{}-{}: {n}", self.round, role, point.id());
        }
    }

    /// Initial score; refusals, unusable text and transport failures give `Refused`.
    pub fn predict(&self, point: &GeoPoint, context: &ContextBlock, task: &TaskContext) -> Result<Score, BackendError> {
        let mut values = Self::base_values(point, task);
        values.insert("address", context.address.clone());
        values.insert("nearby", context.render_nearby());
        let prompt = self.templates.predict.render(&values);
        let payload = Payload::Predict { point: point_ref(point), topic: task.topic.clone() };
        Ok(self.call(point, prompt, payload)?.map_or(Score::Refused, |t| parse_score(&t)))
    }

    /// Covariates worth showing for this point and task; empty on any failure.
    pub fn select_variables(
        &self,
        point: &GeoPoint,
        task: &TaskContext,
        d_max: usize,
    ) -> Result<BTreeSet<CovariateCode>, BackendError> {
        if d_max == 0 {
            return Ok(BTreeSet::new());
        }
        let entries = CovariateRegistry.entries();
        let mut values = Self::base_values(point, task);
        values.insert(
            "candidates",
            entries
                .iter()
                .map(|e| format!("- {}: {} ({}). {}", e.code, e.name, e.unit, e.relevance))
                .collect::<Vec<_>>()
                .join("\n"),
        );
        values.insert("d_max", d_max.to_string());
        let prompt = self.templates.select_variables.render(&values);
        let payload = Payload::VariableSelect {
            point: point_ref(point),
            topic: task.topic.clone(),
            candidates: entries.iter().map(|e| e.code.to_string()).collect(),
            d_max,
        };
        let Some(text) = self.call(point, prompt, payload)? else { return Ok(BTreeSet::new()) };
        let parsed = parse_variables(&text, d_max);
        self.note(AgentRole::VariableSelect, point, &parsed.notes);
        Ok(parsed.value)
    }

    /// Mandatory nearest neighbours plus up to `p_far` points the agent picks
    /// from the ring of `menu_size` candidates just beyond them.
    pub fn select_points(
        &self,
        point: &GeoPoint,
        task: &TaskContext,
        index: &SpatialIndex,
        opts: PointSelectOptions,
    ) -> Result<ReferenceSet, BackendError> {
        let target = index.position(point.id()).expect("point belongs to the indexed dataset");
        let ring = index.nearest_k_at(target, opts.k_near + opts.menu_size);
        let split = opts.k_near.min(ring.len());
        let (near, menu) = ring.split_at(split);
        let mandatory: Vec<String> =
            if opts.mandatory { near.iter().map(|n| n.id.clone()).collect() } else { Vec::new() };
        let mut refs = ReferenceSet { mandatory, extra: Vec::new() };
        if !opts.agent || menu.is_empty() || opts.p_far == 0 {
            return Ok(refs);
        }

        let menu: Vec<MenuEntry> = menu
            .iter()
            .map(|n| {
                let (lat, lon) = index.coords(n.index);
                MenuEntry { id: n.id.clone(), lat, lon, distance_km: round_km(n.distance_km) }
            })
            .collect();
        let mut values = Self::base_values(point, task);
        let note = if refs.mandatory.is_empty() {
            "No references are included automatically; the candidates below are the only ones available.".to_string()
        } else {
            format!(
                "Its {} nearest neighbours are already included as references: {}.",
                refs.mandatory.len(),
                refs.mandatory.join(", ")
            )
        };
        values.insert("mandatory_note", note);
        values.insert("k_near", opts.k_near.to_string());
        values.insert("p_far", opts.p_far.to_string());
        values.insert(
            "menu",
            menu.iter()
                .map(|m| format!("- {} ({}, {}) {:.1} km", m.id, m.lat, m.lon, m.distance_km))
                .collect::<Vec<_>>()
                .join("\n"),
        );
        let prompt = self.templates.select_points.render(&values);
        let ids: Vec<&str> = menu.iter().map(|m| m.id.as_str()).collect();
        let payload = Payload::PointSelect {
            point: point_ref(point),
            topic: task.topic.clone(),
            menu: menu.clone(),
            p_far: opts.p_far,
        };
        let Some(text) = self.call(point, prompt, payload)? else { return Ok(refs) };
        let parsed = parse_points(&text, &ids, point.id(), opts.p_far);
        self.note(AgentRole::PointSelect, point, &parsed.notes);
        refs.extra = parsed.value;
        Ok(refs)
    }

    /// Keep or update the current score in light of the references' previous-round scores.
    pub fn refine(
        &self,
        point: &GeoPoint,
        current: Score,
        task: &TaskContext,
        refs: &[ReferenceInput],
        target_covariates: &CovariateRow,
    ) -> Result<RefineDecision, BackendError> {
        let mut values = Self::base_values(point, task);
        values.insert(
            "current",
            match current {
                Score::Value(v) => v.to_string(),
                Score::Refused => "none (no estimate was given)".into(),
            },
        );
        let target_block = if target_covariates.is_empty() {
            String::new()
        } else {
            let lines: Vec<String> = target_covariates
                .iter()
                .map(|(c, v)| format!("- {c} {}: {v} {}", c.entry().name, c.entry().unit))
                .collect();
            format!("Climate indicators at the target:\n{}\n", lines.join("\n"))
        };
        values.insert("target_block", target_block);
        let shows_covariates = !target_covariates.is_empty() || refs.iter().any(|r| !r.covariates.is_empty());
        values.insert(
            "covariate_hint",
            if shows_covariates { " and with the climate indicators shown".into() } else { String::new() },
        );
        let lines: Vec<String> = refs
            .iter()
            .map(|r| {
                let score = r.score.value().map_or("none".to_string(), |v| v.to_string());
                let mut line = format!("- {}: {:.1} km away, previous estimate {score}", r.id, round_km(r.distance_km));
                if !r.covariates.is_empty() {
                    line.push_str("; ");
                    line.push_str(&covariate_inline(&r.covariates));
                }
                line
            })
            .collect();
        values.insert("references", if lines.is_empty() { "(none)".into() } else { lines.join("\n") });
        let prompt = self.templates.refine.render(&values);
        let payload = Payload::Refine {
            point: point_ref(point),
            topic: task.topic.clone(),
            current: current.as_f64(),
            references: refs
                .iter()
                .map(|r| ReferencePayload {
                    id: r.id.clone(),
                    distance_km: round_km(r.distance_km),
                    score: r.score.as_f64(),
                    covariates: covariate_map(&r.covariates),
                })
                .collect(),
            target_covariates: covariate_map(target_covariates),
        };
        let Some(text) = self.call(point, prompt, payload)? else { return Ok(RefineDecision::Keep) };
        let parsed = parse_refine(&text);
        self.note(AgentRole::Refine, point, &parsed.notes);
        Ok(parsed.value)
    }
}
