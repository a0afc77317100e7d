use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A score on the 0.0..=9.9 scale, stored in tenths so it is always quantised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub struct ScoreValue(u8);

impl ScoreValue {
    pub const MAX_TENTHS: u8 = 99;

    pub fn from_tenths(tenths: u8) -> Option<Self> {
        (tenths <= Self::MAX_TENTHS).then_some(Self(tenths))
    }

    /// Rounds to one decimal; `None` when the rounded value leaves [0.0, 9.9].
    pub fn quantize(v: f64) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        let tenths = (v * 10.0).round();
        (0.0..=Self::MAX_TENTHS as f64).contains(&tenths).then_some(Self(tenths as u8))
    }

    /// Rounds to one decimal and clamps into range.
    pub fn saturating(v: f64) -> Self {
        let tenths = if v.is_nan() { 0.0 } else { (v * 10.0).round().clamp(0.0, Self::MAX_TENTHS as f64) };
        Self(tenths as u8)
    }

    pub fn tenths(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl fmt::Display for ScoreValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

impl From<ScoreValue> for f64 {
    fn from(v: ScoreValue) -> f64 {
        v.as_f64()
    }
}

impl TryFrom<f64> for ScoreValue {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, String> {
        ScoreValue::quantize(v).ok_or_else(|| format!("score {v} outside [0.0, 9.9]"))
    }
}

/// A prediction, or an explicit refusal to give one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Score {
    Value(ScoreValue),
    Refused,
}

impl Score {
    pub fn value(self) -> Option<ScoreValue> {
        match self {
            Score::Value(v) => Some(v),
            Score::Refused => None,
        }
    }

    pub fn as_f64(self) -> Option<f64> {
        self.value().map(ScoreValue::as_f64)
    }

    pub fn is_refused(self) -> bool {
        matches!(self, Score::Refused)
    }
}

pub const REFUSED_TOKEN: &str = "REFUSED";

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Value(v) => v.fmt(f),
            Score::Refused => f.write_str(REFUSED_TOKEN),
        }
    }
}

impl FromStr for Score {
    type Err = String;

    /// Parses the persisted form (`7.3` or `REFUSED`), not free model text.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == REFUSED_TOKEN {
            return Ok(Score::Refused);
        }
        let v: f64 = s.parse().map_err(|_| format!("bad score {s:?}"))?;
        let q = ScoreValue::quantize(v).ok_or_else(|| format!("score {s:?} out of range"))?;
        if (q.as_f64() - v).abs() > 1e-9 {
            return Err(format!("score {s:?} is not quantised to one decimal"));
        }
        Ok(Score::Value(q))
    }
}
