//! Map context for the predict prompt: an address and the places around a
//! location, fetched from OpenStreetMap services (Nominatim reverse geocoding
//! and an Overpass `around` query), cached on disk per rounded coordinate.
//! A synthetic mode fabricates a stable context from the coordinates alone so
//! tests and desk runs need no network.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geo::{destination, haversine_deg, initial_bearing_deg, Compass16, GeoPoint};
use crate::transport::{retry, AttemptError, HostGate, RetryError, RetryPolicy};

/// Overrides both the reverse-geocoding and the nearby-place base URL.
pub const OSM_BASE_ENV: &str = "GEOSR_OSM_BASE";

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("network failure after {attempts} attempts: {last}")]
    Network { attempts: u32, last: String },
    #[error("unexpected reply from {service}: {message}")]
    Reply { service: &'static str, message: String },
    #[error("no cached context for {0}")]
    CacheMiss(String),
    #[error("corrupt cache file {path}: {message}")]
    CorruptCache { path: PathBuf, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    Live,
    Cache,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearbyPlace {
    pub name: String,
    pub distance_km: f64,
    pub direction: Compass16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub address: String,
    pub nearby: Vec<NearbyPlace>,
    pub source: ContextSource,
}

impl ContextBlock {
    /// Sorts places by distance (then name) and keeps at most `limit`.
    pub fn new(address: String, mut nearby: Vec<NearbyPlace>, limit: usize, source: ContextSource) -> Self {
        nearby.retain(|p| p.distance_km.is_finite() && p.distance_km >= 0.0);
        nearby.sort_by(|a, b| a.distance_km.total_cmp(&b.distance_km).then_with(|| a.name.cmp(&b.name)));
        nearby.truncate(limit);
        Self { address, nearby, source }
    }

    /// One line per place: `1.2 km North-Northeast: Name`.
    pub fn render_nearby(&self) -> String {
        if self.nearby.is_empty() {
            return "(none found)".into();
        }
        self.nearby
            .iter()
            .map(|p| format!("{:.1} km {}: {}", p.distance_km, p.direction, p.name))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMode {
    Live,
    CacheOnly,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    pub mode: ContextMode,
    pub cache_dir: Option<PathBuf>,
    pub nominatim_base: String,
    pub overpass_base: String,
    pub nearby_count: usize,
    pub radius_km: f64,
    /// Minimum spacing between requests to the same host.
    pub politeness_ms: u64,
    pub user_agent: String,
    pub retry: RetryPolicy,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            mode: ContextMode::Synthetic,
            cache_dir: None,
            nominatim_base: "https://nominatim.openstreetmap.org".into(),
            overpass_base: "https://overpass-api.de".into(),
            nearby_count: 10,
            radius_km: 50.0,
            politeness_ms: 1100,
            user_agent: concat!("geosr/", env!("CARGO_PKG_VERSION")).into(),
            retry: RetryPolicy::default(),
        }
    }
}

impl ContextConfig {
    /// Applies `GEOSR_OSM_BASE` if set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(base) = std::env::var(OSM_BASE_ENV) {
            if !base.is_empty() {
                self.nominatim_base = base.clone();
                self.overpass_base = base;
            }
        }
        self
    }
}

/// Cache key: coordinates rounded to four decimals (about 11 m).
pub fn cache_key(lat: f64, lon: f64) -> String {
    format!("{:.4}_{:.4}", lat, lon)
}

pub struct ContextProvider {
    config: ContextConfig,
    agent: ureq::Agent,
    gates: Mutex<HashMap<String, Arc<HostGate>>>,
    cache_writer: Mutex<()>,
}

#[derive(Deserialize)]
struct ReverseReply {
    display_name: Option<String>,
    error: Option<String>,
}

#[derive(Deserialize)]
struct OverpassReply {
    elements: Vec<OverpassElement>,
}

#[derive(Deserialize)]
struct OverpassElement {
    lat: Option<f64>,
    lon: Option<f64>,
    #[serde(default)]
    tags: HashMap<String, String>,
}

impl ContextProvider {
    pub fn new(config: ContextConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .user_agent(config.user_agent.as_str())
            .build()
            .into();
        Self { config, agent, gates: Mutex::new(HashMap::new()), cache_writer: Mutex::new(()) }
    }

    pub fn config(&self) -> &ContextConfig {
        &self.config
    }

    pub fn build_context(&self, point: &GeoPoint) -> Result<ContextBlock, ContextError> {
        match self.config.mode {
            ContextMode::Synthetic => Ok(synthetic_context(point.lat(), point.lon(), &self.config)),
            ContextMode::CacheOnly => {
                let key = cache_key(point.lat(), point.lon());
                self.read_cache(&key)?.ok_or(ContextError::CacheMiss(key))
            }
            ContextMode::Live => {
                let key = cache_key(point.lat(), point.lon());
                if let Some(hit) = self.read_cache(&key)? {
                    return Ok(hit);
                }
                let block = self.fetch(point.lat(), point.lon())?;
                self.write_cache(&key, &block)?;
                Ok(block)
            }
        }
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.config.cache_dir.as_ref().map(|d| d.join(format!("ctx_{key}.json")))
    }

    fn read_cache(&self, key: &str) -> Result<Option<ContextBlock>, ContextError> {
        let Some(path) = self.cache_path(key) else { return Ok(None) };
        match fs::read_to_string(&path) {
            Ok(s) => {
                let mut block: ContextBlock = serde_json::from_str(&s)
                    .map_err(|e| ContextError::CorruptCache { path: path.clone(), message: e.to_string() })?;
                block.source = ContextSource::Cache;
                Ok(Some(block))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn write_cache(&self, key: &str, block: &ContextBlock) -> Result<(), ContextError> {
        let Some(path) = self.cache_path(key) else { return Ok(()) };
        let _guard = self.cache_writer.lock().expect("cache writer poisoned");
        write_atomic(&path, serde_json::to_string_pretty(block).expect("serialisable").as_bytes())?;
        Ok(())
    }

    fn gate(&self, base: &str) -> Arc<HostGate> {
        let host = base.split("://").nth(1).unwrap_or(base).split('/').next().unwrap_or(base).to_string();
        self.gates
            .lock()
            .expect("gate map poisoned")
            .entry(host)
            .or_insert_with(|| Arc::new(HostGate::new(Duration::from_millis(self.config.politeness_ms))))
            .clone()
    }

    fn get(
        &self,
        service: &'static str,
        base: &str,
        path: &str,
        query: &[(&str, String)],
    ) -> Result<String, ContextError> {
        let url = format!("{}{}", base.trim_end_matches('/'), path);
        let gate = self.gate(base);
        let mut rng = rand::rng();
        let result = retry(&self.config.retry, &mut rng, |_| {
            gate.run(|| {
                let mut req = self.agent.get(&url);
                for (k, v) in query {
                    req = req.query(*k, v);
                }
                let mut resp = req.call().map_err(|e| AttemptError::Transient(e.to_string()))?;
                let status = resp.status().as_u16();
                let body = resp.body_mut().read_to_string().map_err(|e| AttemptError::Transient(e.to_string()))?;
                match status {
                    200..=299 => Ok(body),
                    408 | 429 | 500..=599 => Err(AttemptError::Transient(format!("HTTP {status}"))),
                    _ => Err(AttemptError::Fatal(ContextError::Reply { service, message: format!("HTTP {status}") })),
                }
            })
        });
        match result {
            Ok((body, _)) => Ok(body),
            Err(RetryError::Exhausted { attempts, last }) => Err(ContextError::Network { attempts, last }),
            Err(RetryError::Fatal { error, .. }) => Err(error),
        }
    }

    fn fetch(&self, lat: f64, lon: f64) -> Result<ContextBlock, ContextError> {
        let body = self.get(
            "reverse geocoder",
            &self.config.nominatim_base,
            "/reverse",
            &[("format", "jsonv2".into()), ("lat", lat.to_string()), ("lon", lon.to_string()), ("zoom", "14".into())],
        )?;
        let reverse: ReverseReply = serde_json::from_str(&body)
            .map_err(|e| ContextError::Reply { service: "reverse geocoder", message: e.to_string() })?;
        let address = match (reverse.display_name, reverse.error) {
            (Some(name), _) => name,
            (None, Some(err)) => {
                log::info!("reverse geocoding ({lat}, {lon}): {err}");
                "Unknown location".into()
            }
            (None, None) => "Unknown location".into(),
        };

        let radius_m = (self.config.radius_km * 1000.0).round() as i64;
        let ql = format!("[out:json][timeout:25];node(around:{radius_m},{lat},{lon})[\"place\"][\"name\"];out body;");
        let body = self.get("nearby-place search", &self.config.overpass_base, "/api/interpreter", &[("data", ql)])?;
        let places: OverpassReply = serde_json::from_str(&body)
            .map_err(|e| ContextError::Reply { service: "nearby-place search", message: e.to_string() })?;
        let nearby = places
            .elements
            .into_iter()
            .filter_map(|el| {
                let (plat, plon) = (el.lat?, el.lon?);
                let name = el.tags.get("name")?.clone();
                Some(NearbyPlace {
                    name,
                    distance_km: haversine_deg(lat, lon, plat, plon),
                    direction: Compass16::from_bearing(initial_bearing_deg(lat, lon, plat, plon)),
                })
            })
            .collect();
        Ok(ContextBlock::new(address, nearby, self.config.nearby_count, ContextSource::Live))
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

const SYLLABLES: [&str; 16] =
    ["ka", "lo", "mer", "tan", "vel", "sor", "ran", "den", "pol", "quin", "sa", "tor", "mi", "nel", "gar", "fen"];
const SUFFIXES: [&str; 8] = ["ville", "ford", "ton", "grad", "pur", "abad", "haven", "stead"];
const KINDS: [&str; 4] = ["village", "town", "hamlet", "city"];

fn synthetic_name(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=2);
    let mut s: String = (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
    s.push_str(SUFFIXES[rng.random_range(0..SUFFIXES.len())]);
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => s,
    }
}

/// A stable, coordinate-derived context for offline runs.
pub fn synthetic_context(lat: f64, lon: f64, config: &ContextConfig) -> ContextBlock {
    let key = cache_key(lat, lon);
    let digest = Sha256::digest(key.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    let locality = synthetic_name(&mut rng);
    let region = synthetic_name(&mut rng);
    let address = format!("{locality}, {region} District (synthetic, {key})");
    let radius = config.radius_km.max(1.0);
    let nearby = (0..config.nearby_count)
        .map(|_| {
            let bearing = rng.random_range(0.0..360.0);
            let dist = rng.random_range(0.5..radius);
            let (plat, plon) = destination(lat, lon, bearing, dist);
            let kind = KINDS[rng.random_range(0..KINDS.len())];
            NearbyPlace {
                name: format!("{} ({kind})", synthetic_name(&mut rng)),
                distance_km: haversine_deg(lat, lon, plat, plon),
                direction: Compass16::from_bearing(initial_bearing_deg(lat, lon, plat, plon)),
            }
        })
        .collect();
    ContextBlock::new(address, nearby, config.nearby_count, ContextSource::Synthetic)
}
