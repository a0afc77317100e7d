//! Analytic fields over the globe, used to synthesise ground truth and to
//! drive the mock backend's hidden "model knowledge".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Top of the 10-point score scale.
pub const SCORE_MAX: f64 = 9.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldSpec {
    /// Same value everywhere, already on the score scale.
    Constant(f64),
    /// Latitude itself, south pole low.
    LatLinear,
    /// `cos(lat)`: warm equator, cold poles.
    Equator,
    /// A smooth blend of latitude and longitude structure.
    Wave,
    /// Population-density-like values in people per km², roughly 10..1000.
    Density,
}

impl FieldSpec {
    /// Field value in task units.
    pub fn raw(&self, lat: f64, lon: f64) -> f64 {
        let (phi, lambda) = (lat.to_radians(), lon.to_radians());
        match *self {
            FieldSpec::Constant(v) => v,
            FieldSpec::LatLinear => lat,
            FieldSpec::Equator => phi.cos(),
            FieldSpec::Wave => 0.6 * phi.cos() + 0.4 * (0.5 + 0.5 * lambda.sin()),
            FieldSpec::Density => 10f64.powf(1.0 + 2.0 * phi.cos() * (0.5 + 0.5 * (lambda + 0.7).cos())),
        }
    }

    /// Analytic bounds of `raw` over the globe.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            FieldSpec::Constant(v) => (v, v),
            FieldSpec::LatLinear => (-90.0, 90.0),
            FieldSpec::Equator => (0.0, 1.0),
            FieldSpec::Wave => (0.0, 1.0),
            FieldSpec::Density => (10.0, 1000.0),
        }
    }

    /// `raw` mapped linearly onto `[0, 9.9]`. A constant field is taken to be
    /// on the score scale already and is only clamped.
    pub fn scaled(&self, lat: f64, lon: f64) -> f64 {
        let raw = self.raw(lat, lon);
        let (lo, hi) = self.range();
        if hi > lo {
            (raw - lo) / (hi - lo) * SCORE_MAX
        } else {
            raw.clamp(0.0, SCORE_MAX)
        }
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSpec::Constant(v) => write!(f, "constant:{v}"),
            FieldSpec::LatLinear => f.write_str("lat-linear"),
            FieldSpec::Equator => f.write_str("equator"),
            FieldSpec::Wave => f.write_str("wave"),
            FieldSpec::Density => f.write_str("density"),
        }
    }
}

impl FromStr for FieldSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "lat-linear" => Ok(FieldSpec::LatLinear),
            "equator" => Ok(FieldSpec::Equator),
            "wave" => Ok(FieldSpec::Wave),
            "density" => Ok(FieldSpec::Density),
            other => match other.strip_prefix("constant:") {
                Some(v) => v
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(FieldSpec::Constant)
                    .ok_or_else(|| format!("bad constant field value {v:?}")),
                None => {
                    Err(format!("unknown field {other:?} (expected constant:<v>, lat-linear, equator, wave, density)"))
                }
            },
        }
    }
}

impl Serialize for FieldSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FieldSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
