//! Deterministic stand-in for a hosted model.
//!
//! The mock reads only the structured payload. Predictions come from a hidden
//! analytic field plus seeded Gaussian noise; refinement can blend neighbour
//! scores by inverse distance. Every reply is a pure function of the payload
//! and the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendRequest, BackendResponse, MenuEntry, Payload};
use crate::agents::ScoreValue;
use crate::field::FieldSpec;

/// How the mock answers the point-selection agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointPolicy {
    /// The closest menu entries.
    Nearest,
    /// The farthest menu entries, farthest first.
    Farthest,
    /// Entries spread evenly over the menu.
    Spread,
    /// Reply with `points_reply` verbatim.
    Fixed,
}

/// How the mock answers the refine agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinePolicy {
    Keep,
    /// Blend the current score towards the inverse-distance-weighted mean of the references.
    Idw,
    /// Reply with `refine_reply` verbatim.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub field: FieldSpec,
    pub noise_sd: f64,
    /// Fraction of predict calls answered with a refusal.
    pub refusal_rate: f64,
    pub variables_reply: String,
    pub points: PointPolicy,
    pub points_reply: String,
    pub refine: RefinePolicy,
    pub refine_reply: String,
    /// Weight of the neighbour mean in the IDW policy, in [0, 1].
    pub blend: f64,
    pub idw_power: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            field: FieldSpec::Wave,
            noise_sd: 1.5,
            refusal_rate: 0.0,
            variables_reply: "bio1, bio12".into(),
            points: PointPolicy::Spread,
            points_reply: String::new(),
            refine: RefinePolicy::Idw,
            refine_reply: String::new(),
            blend: 0.5,
            idw_power: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    config: MockConfig,
    seed: u64,
}

/// Derives a per-point seed from the run seed, a purpose tag and the point id.
pub fn point_seed(seed: u64, tag: &str, point_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0]);
    h.update(point_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// `clamp(round1(scaled field + N(0, noise_sd)), 0.0, 9.9)` with a seeded draw.
pub fn mock_field_score(lat: f64, lon: f64, field: &FieldSpec, noise_sd: f64, rng_seed: u64) -> ScoreValue {
    let mut v = field.scaled(lat, lon);
    if noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let normal = Normal::new(0.0, noise_sd).expect("finite positive sd");
        v += normal.sample(&mut rng);
    }
    ScoreValue::saturating(v)
}

impl MockBackend {
    pub fn new(config: MockConfig, seed: u64) -> Self {
        Self { config, seed }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    fn reply(&self, payload: &Payload) -> String {
        match payload {
            Payload::Predict { point, .. } => {
                if self.config.refusal_rate > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(point_seed(self.seed, "refuse", &point.id));
                    if rng.random::<f64>() < self.config.refusal_rate {
                        return "I cannot provide that rating.".into();
                    }
                }
                let s = mock_field_score(
                    point.lat,
                    point.lon,
                    &self.config.field,
                    self.config.noise_sd,
                    point_seed(self.seed, "predict", &point.id),
                );
                format!("SCORE: {s}")
            }
            Payload::VariableSelect { .. } => self.config.variables_reply.clone(),
            Payload::PointSelect { menu, p_far, .. } => match self.config.points {
                PointPolicy::Fixed => self.config.points_reply.clone(),
                policy => {
                    let chosen = choose_points(menu, *p_far, policy);
                    if chosen.is_empty() {
                        "NONE".into()
                    } else {
                        chosen.join(", ")
                    }
                }
            },
            Payload::Refine { current, references, .. } => match self.config.refine {
                RefinePolicy::Keep => "KEEP".into(),
                RefinePolicy::Fixed => self.config.refine_reply.clone(),
                RefinePolicy::Idw => {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for r in references {
                        if let Some(s) = r.score {
                            let w = 1.0 / r.distance_km.max(1.0).powf(self.config.idw_power);
                            num += w * s;
                            den += w;
                        }
                    }
                    if den == 0.0 {
                        return "KEEP".into();
                    }
                    let idw = num / den;
                    let target = match current {
                        Some(c) => (1.0 - self.config.blend) * c + self.config.blend * idw,
                        None => idw,
                    };
                    let new = ScoreValue::saturating(target);
                    match current.and_then(ScoreValue::quantize) {
                        Some(c) if c == new => "KEEP".into(),
                        _ => format!("UPDATE: {new}"),
                    }
                }
            },
        }
    }
}

fn choose_points(menu: &[MenuEntry], p_far: usize, policy: PointPolicy) -> Vec<String> {
    let m = menu.len();
    let p = p_far.min(m);
    let idx: Vec<usize> = match policy {
        PointPolicy::Nearest => (0..p).collect(),
        PointPolicy::Farthest => (0..p).map(|i| m - 1 - i).collect(),
        PointPolicy::Spread => (0..p).map(|i| ((2 * i + 1) * m) / (2 * p)).collect(),
        PointPolicy::Fixed => Vec::new(),
    };
    idx.into_iter().map(|i| menu[i].id.clone()).collect()
}

impl Backend for MockBackend {
    fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        if request.role != request.payload.role() {
            return Err(BackendError::Config(format!(
                "request role {} does not match payload kind {}",
                request.role,
                request.payload.role()
            )));
        }
        Ok(BackendResponse { text: self.reply(&request.payload), attempts: 1, elapsed_ms: 0 })
    }
}
