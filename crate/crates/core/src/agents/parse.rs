//! Total parsers from free model text to typed decisions. None of them fail:
//! every input maps to some valid output, with problems reported as notes.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::score::{Score, ScoreValue};
use crate::covariates::CovariateCode;

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap());
static LABELED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bscore\s*[:=]\s*\**\s*(-?\d+(?:\.\d+)?)").unwrap());
static REFUSAL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(refused?|refusing|cannot|can't|can not|unable|decline|declining|not able|won't|sorry|n/a)\b")
        .unwrap()
});
static DECISION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(keep|update)\b").unwrap());
static CODE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bbio\d+\b").unwrap());

fn numbers(text: &str) -> impl Iterator<Item = f64> + '_ {
    NUMBER.find_iter(text).filter_map(|m| m.as_str().parse::<f64>().ok())
}

/// Predict-agent reply to a score.
///
/// Order of precedence: an in-range `SCORE: x` label; a refusal phrase; the
/// first number that lands in range after rounding to one decimal.
pub fn parse_score(text: &str) -> Score {
    for cap in LABELED.captures_iter(text) {
        if let Some(v) = cap[1].parse::<f64>().ok().and_then(ScoreValue::quantize) {
            return Score::Value(v);
        }
    }
    if REFUSAL.is_match(text) {
        return Score::Refused;
    }
    numbers(text).find_map(ScoreValue::quantize).map_or(Score::Refused, Score::Value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineDecision {
    Keep,
    Update(ScoreValue),
}

impl RefineDecision {
    pub fn apply(self, current: Score) -> Score {
        match self {
            RefineDecision::Keep => current,
            RefineDecision::Update(v) => Score::Value(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub notes: Vec<String>,
}

impl<T> Parsed<T> {
    fn clean(value: T) -> Self {
        Self { value, notes: Vec::new() }
    }

    fn noted(value: T, note: impl Into<String>) -> Self {
        Self { value, notes: vec![note.into()] }
    }
}

/// Refine-agent reply. The first KEEP/UPDATE keyword decides; an UPDATE
/// needs a number after it that lands in range, otherwise the score is kept.
pub fn parse_refine(text: &str) -> Parsed<RefineDecision> {
    let Some(m) = DECISION.find(text) else {
        return Parsed::noted(RefineDecision::Keep, "no KEEP/UPDATE keyword; keeping current score");
    };
    if m.as_str().eq_ignore_ascii_case("keep") {
        return Parsed::clean(RefineDecision::Keep);
    }
    let Some(v) = numbers(&text[m.end()..]).next() else {
        return Parsed::noted(RefineDecision::Keep, "UPDATE without a value; keeping current score");
    };
    match ScoreValue::quantize(v) {
        Some(s) => Parsed::clean(RefineDecision::Update(s)),
        None => {
            Parsed::noted(RefineDecision::Keep, format!("UPDATE value {v} outside [0.0, 9.9]; keeping current score"))
        }
    }
}

/// Variable-selection reply: known codes in reply order, deduplicated, at
/// most `d_max` of them. Unknown codes are dropped with a note.
pub fn parse_variables(text: &str, d_max: usize) -> Parsed<BTreeSet<CovariateCode>> {
    let mut seen = Vec::new();
    let mut notes = Vec::new();
    for m in CODE.find_iter(text) {
        match m.as_str().parse::<CovariateCode>() {
            Ok(code) if !seen.contains(&code) => seen.push(code),
            Ok(_) => {}
            Err(_) => notes.push(format!("unknown covariate code {:?} dropped", m.as_str())),
        }
    }
    if seen.len() > d_max {
        notes.push(format!("{} codes selected, keeping the first {d_max}", seen.len()));
        seen.truncate(d_max);
    }
    Parsed { value: seen.into_iter().collect(), notes }
}

/// Point-selection reply: ids from `menu` in reply order, excluding the
/// target and duplicates, at most `p_far` of them.
pub fn parse_points(text: &str, menu: &[&str], target: &str, p_far: usize) -> Parsed<Vec<String>> {
    let mut chosen: Vec<String> = Vec::new();
    let mut notes = Vec::new();
    let strip: &[char] = &['"', '\'', '`', '[', ']', '(', ')', '{', '}', '<', '>', '.', ':', '*', '-'];
    for token in text.split(|c: char| c.is_whitespace() || c == ',' || c == ';') {
        if token.is_empty() || chosen.len() >= p_far {
            continue;
        }
        let stripped = token.trim_matches(strip);
        let id = [token, stripped].into_iter().find(|t| !t.is_empty() && (*t == target || menu.contains(t)));
        match id {
            Some(id) if id == target => notes.push(format!("target id {id:?} dropped")),
            Some(id) if chosen.iter().any(|c| c == id) => notes.push(format!("duplicate id {id:?} dropped")),
            Some(id) => chosen.push(id.to_string()),
            None if stripped.eq_ignore_ascii_case("none") => {}
            None if !stripped.is_empty() && stripped.chars().any(|c| c.is_ascii_digit()) => {
                notes.push(format!("{stripped:?} is not a candidate id"))
            }
            None => {}
        }
    }
    Parsed { value: chosen, notes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(t: u8) -> Score {
        Score::Value(ScoreValue::from_tenths(t).unwrap())
    }

    #[test]
    fn score_examples() {
        assert_eq!(parse_score("SCORE: 7.3"), v(73));
        assert_eq!(parse_score("I cannot provide that rating."), Score::Refused);
        assert_eq!(parse_score("The score is 4.80 out of 9.9"), v(48));
        assert_eq!(parse_score("score=9"), v(90));
        assert_eq!(parse_score("**SCORE:** 2.25"), v(23));
        assert_eq!(parse_score("Sorry, but SCORE: 5.0"), v(50));
        assert_eq!(parse_score("Year 2023 rating 6"), v(60));
        assert_eq!(parse_score("SCORE: 12 ... final 8.1"), v(81));
        assert_eq!(parse_score(""), Score::Refused);
        assert_eq!(parse_score("no idea at all"), Score::Refused);
        assert_eq!(parse_score("REFUSED"), Score::Refused);
        assert_eq!(parse_score("SCORE: 9.96"), Score::Refused);
    }

    #[test]
    fn refine_examples() {
        assert_eq!(parse_refine("KEEP").value, RefineDecision::Keep);
        assert_eq!(parse_refine("UPDATE: 6.2").value, RefineDecision::Update(ScoreValue::from_tenths(62).unwrap()));
        let out = parse_refine("UPDATE: 12.4");
        assert_eq!(out.value, RefineDecision::Keep);
        assert_eq!(out.notes.len(), 1);
        assert_eq!(
            parse_refine("I would update it to 3").value,
            RefineDecision::Update(ScoreValue::from_tenths(30).unwrap())
        );
        assert_eq!(parse_refine("keep it, no update to 5").value, RefineDecision::Keep);
        assert_eq!(parse_refine("UPDATE").value, RefineDecision::Keep);
        assert_eq!(parse_refine("7.0").value, RefineDecision::Keep);
        assert_eq!(parse_refine("safekeeping 7.0").value, RefineDecision::Keep);
    }

    #[test]
    fn refine_apply() {
        let u = RefineDecision::Update(ScoreValue::from_tenths(40).unwrap());
        assert_eq!(u.apply(Score::Refused), v(40));
        assert_eq!(RefineDecision::Keep.apply(Score::Refused), Score::Refused);
        assert_eq!(RefineDecision::Keep.apply(v(11)), v(11));
    }

    fn codes(ns: &[u8]) -> BTreeSet<CovariateCode> {
        ns.iter().map(|&n| CovariateCode::new(n).unwrap()).collect()
    }

    #[test]
    fn variable_examples() {
        assert_eq!(parse_variables("bio1, bio12", 5).value, codes(&[1, 12]));
        let out = parse_variables("bio1, bio99, bio12", 5);
        assert_eq!(out.value, codes(&[1, 12]));
        assert_eq!(out.notes.len(), 1);
        assert!(parse_variables("", 5).value.is_empty());
        assert!(parse_variables("NONE", 5).value.is_empty());
        assert_eq!(parse_variables("BIO5 bio5 bio3 bio7", 2).value, codes(&[3, 5]));
        assert!(parse_variables("bio1", 0).value.is_empty());
        assert!(parse_variables("biology1 xbio2", 5).value.is_empty());
    }

    #[test]
    fn point_examples() {
        let menu = ["p11", "p12", "p13", "p14"];
        assert_eq!(parse_points("p13, p11, p12", &menu, "p0", 5).value, ["p13", "p11", "p12"]);
        assert_eq!(parse_points("p13, p11, p12", &menu, "p0", 2).value, ["p13", "p11"]);
        let out = parse_points("p0, p12, p12, p99", &menu, "p0", 5);
        assert_eq!(out.value, ["p12"]);
        assert_eq!(out.notes.len(), 3);
        assert_eq!(parse_points("[\"p14\"]; (p11).", &menu, "p0", 5).value, ["p14", "p11"]);
        assert!(parse_points("NONE", &menu, "p0", 5).value.is_empty());
        assert!(parse_points("p11", &[], "p0", 5).value.is_empty());
    }
}
