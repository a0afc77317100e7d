//! Prompt templates with `{name}` placeholders.
//!
//! Built-in wording ships inside the binary; a directory holding any of
//! `predict.txt`, `select_variables.txt`, `select_points.txt` or `refine.txt`
//! overrides the matching template.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backend::AgentRole;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("reading template {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("template {file} uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { file: String, name: String },
    #[error("template {file} is empty")]
    Empty { file: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    text: String,
}

impl Template {
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_name(&after[..close]) => {
                    out.push(&after[..close]);
                    rest = &after[close + 1..];
                }
                _ => rest = after,
            }
        }
        out
    }

    /// Single pass: substituted values are never re-scanned, so braces in
    /// data cannot trigger further substitution. Unknown names stay verbatim.
    pub fn render(&self, values: &HashMap<&str, String>) -> String {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_name(&after[..close]) => {
                    let name = &after[..close];
                    match values.get(name) {
                        Some(v) => out.push_str(v),
                        None => {
                            out.push('{');
                            out.push_str(name);
                            out.push('}');
                        }
                    }
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_' || b.is_ascii_digit())
}

fn file_name(role: AgentRole) -> &'static str {
    match role {
        AgentRole::Predict => "predict.txt",
        AgentRole::VariableSelect => "select_variables.txt",
        AgentRole::PointSelect => "select_points.txt",
        AgentRole::Refine => "refine.txt",
    }
}

fn allowed(role: AgentRole) -> &'static [&'static str] {
    match role {
        AgentRole::Predict => &["topic", "scale_hint", "id", "lat", "lon", "address", "nearby"],
        AgentRole::VariableSelect => &["topic", "scale_hint", "id", "lat", "lon", "candidates", "d_max"],
        AgentRole::PointSelect => {
            &["topic", "scale_hint", "id", "lat", "lon", "mandatory_note", "menu", "p_far", "k_near"]
        }
        AgentRole::Refine => {
            &["topic", "scale_hint", "id", "lat", "lon", "current", "target_block", "references", "covariate_hint"]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub predict: Template,
    pub select_variables: Template,
    pub select_points: Template,
    pub refine: Template,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        let t = |s: &str| Template { text: s.to_string() };
        Self {
            predict: t(include_str!("../../templates/predict.txt")),
            select_variables: t(include_str!("../../templates/select_variables.txt")),
            select_points: t(include_str!("../../templates/select_points.txt")),
            refine: t(include_str!("../../templates/refine.txt")),
        }
    }

    /// Built-ins, with any files present in `dir` taking precedence.
    pub fn load(dir: Option<&Path>) -> Result<Self, TemplateError> {
        let mut out = Self::builtin();
        if let Some(dir) = dir {
            for role in [AgentRole::Predict, AgentRole::VariableSelect, AgentRole::PointSelect, AgentRole::Refine] {
                let path = dir.join(file_name(role));
                match std::fs::read_to_string(&path) {
                    Ok(text) => *out.get_mut(role) = Template { text },
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(source) => return Err(TemplateError::Io { path, source }),
                }
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn get(&self, role: AgentRole) -> &Template {
        match role {
            AgentRole::Predict => &self.predict,
            AgentRole::VariableSelect => &self.select_variables,
            AgentRole::PointSelect => &self.select_points,
            AgentRole::Refine => &self.refine,
        }
    }

    fn get_mut(&mut self, role: AgentRole) -> &mut Template {
        match role {
            AgentRole::Predict => &mut self.predict,
            AgentRole::VariableSelect => &mut self.select_variables,
            AgentRole::PointSelect => &mut self.select_points,
            AgentRole::Refine => &mut self.refine,
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for role in [AgentRole::Predict, AgentRole::VariableSelect, AgentRole::PointSelect, AgentRole::Refine] {
            let t = self.get(role);
            let file = file_name(role).to_string();
            if t.text.trim().is_empty() {
                return Err(TemplateError::Empty { file });
            }
            if let Some(bad) = t.placeholders().into_iter().find(|p| !allowed(role).contains(p)) {
                return Err(TemplateError::UnknownPlaceholder { file, name: bad.to_string() });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(pairs: &[(&'static str, &str)]) -> HashMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn builtins_validate() {
        PromptTemplates::builtin().validate().unwrap();
    }

    #[test]
    fn render_is_single_pass() {
        let t = Template { text: "a {x} b {y} {z".into() };
        let out = t.render(&vals(&[("x", "{y}"), ("y", "Y")]));
        assert_eq!(out, "a {y} b Y {z");
    }

    #[test]
    fn unknown_names_left_alone() {
        let t = Template { text: "{ nope } {json} {}".into() };
        assert_eq!(t.render(&HashMap::new()), "{ nope } {json} {}");
        assert_eq!(t.placeholders(), ["json"]);
    }

    #[test]
    fn override_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("predict.txt"), "Rate {topic} at {lat},{lon}").unwrap();
        let t = PromptTemplates::load(Some(dir.path())).unwrap();
        assert_eq!(t.predict.text(), "Rate {topic} at {lat},{lon}");
        assert_eq!(t.refine, PromptTemplates::builtin().refine);

        std::fs::write(dir.path().join("refine.txt"), "{bogus}").unwrap();
        assert!(matches!(PromptTemplates::load(Some(dir.path())), Err(TemplateError::UnknownPlaceholder { .. })));
    }
}
