use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendKind, Completion, GatewayError, GenerationRequest};
use crate::prompt::fenced_blocks;

/// What the oracle answers with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseTemplate {
    /// Verbatim response text.
    Text(String),
    /// Source code, returned inside a fenced block.
    Code(String),
    /// The ruleset's stored solution for the request's problem, fenced.
    /// Falls back to the default response when none is stored.
    Solution,
    /// The last fenced block of the prompt, fences included. For a repair
    /// prompt this hands back the target guess unchanged.
    EchoLastCodeBlock,
}

/// Conjunction of optional constraints on a request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_in: Option<Vec<String>>,
    /// Matches when any in-context pair id is listed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_in: Option<Vec<String>>,
    /// Matches when any in-context pair comes from a listed problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_problem_in: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_pairs: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
}

impl Condition {
    fn matches(&self, r: &GenerationRequest) -> bool {
        let m = &r.meta;
        let listed = |list: &Option<Vec<String>>, value: Option<&String>| match list {
            None => true,
            Some(list) => value.is_some_and(|v| list.contains(v)),
        };
        let any_listed = |list: &Option<Vec<String>>, values: &[String]| match list {
            None => true,
            Some(list) => values.iter().any(|v| list.contains(v)),
        };
        self.purpose.as_ref().is_none_or(|p| *p == r.tag)
            && listed(&self.problem_in, m.problem_id.as_ref())
            && any_listed(&self.pair_in, &m.pair_ids)
            && any_listed(&self.pair_problem_in, &m.pair_problem_ids)
            && self.no_pairs.is_none_or(|b| b == m.pair_ids.is_empty())
            && self.attempt.is_none_or(|a| m.attempt == Some(a))
            && self
                .prompt_contains
                .as_ref()
                .is_none_or(|s| r.prompt.contains(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleRule {
    #[serde(default)]
    pub when: Condition,
    pub respond: ResponseTemplate,
}

/// First matching rule wins; unmatched requests get `default`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleRuleset {
    #[serde(default)]
    pub solutions: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<OracleRule>,
    #[serde(default = "default_response")]
    pub default: ResponseTemplate,
}

fn default_response() -> ResponseTemplate {
    ResponseTemplate::Text("I cannot help with that.".into())
}

impl Default for OracleRuleset {
    fn default() -> Self {
        OracleRuleset {
            solutions: BTreeMap::new(),
            rules: Vec::new(),
            default: default_response(),
        }
    }
}

impl OracleRuleset {
    pub fn rule(mut self, when: Condition, respond: ResponseTemplate) -> Self {
        self.rules.push(OracleRule { when, respond });
        self
    }

    pub fn solution(mut self, problem_id: impl Into<String>, code: impl Into<String>) -> Self {
        self.solutions.insert(problem_id.into(), code.into());
        self
    }

    pub fn with_default(mut self, default: ResponseTemplate) -> Self {
        self.default = default;
        self
    }

    fn referenced_problems(&self) -> impl Iterator<Item = &String> {
        self.solutions.keys().chain(self.rules.iter().flat_map(|r| {
            r.when
                .problem_in
                .iter()
                .flatten()
                .chain(r.when.pair_problem_in.iter().flatten())
        }))
    }
}

/// Deterministic backend answering from an [`OracleRuleset`].
#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    ruleset: OracleRuleset,
}

fn fence(code: &str) -> String {
    format!("```python\n{code}\n```")
}

impl ScriptedOracle {
    /// Validates every problem id the ruleset mentions against `known`.
    pub fn new<'a>(
        ruleset: OracleRuleset,
        known: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, GatewayError> {
        let known: HashSet<&str> = known.into_iter().collect();
        if let Some(id) = ruleset.referenced_problems().find(|id| !known.contains(id.as_str())) {
            return Err(GatewayError::UnknownProblem(id.clone()));
        }
        Ok(ScriptedOracle { ruleset })
    }

    pub fn from_file<'a>(path: &Path, known: impl IntoIterator<Item = &'a str>) -> Result<Self, GatewayError> {
        let bytes = std::fs::read(path)?;
        let ruleset: OracleRuleset = serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::new(ruleset, known)
    }

    fn render(&self, template: &ResponseTemplate, r: &GenerationRequest) -> String {
        match template {
            ResponseTemplate::Text(t) => t.clone(),
            ResponseTemplate::Code(c) => fence(c),
            ResponseTemplate::Solution => match r
                .meta
                .problem_id
                .as_ref()
                .and_then(|id| self.ruleset.solutions.get(id))
            {
                Some(code) => fence(code),
                None if template != &self.ruleset.default => self.render(&self.ruleset.default, r),
                None => String::new(),
            },
            ResponseTemplate::EchoLastCodeBlock => fenced_blocks(&r.prompt)
                .last()
                .map(|b| b.full.to_string())
                .unwrap_or_default(),
        }
    }

    pub fn respond(&self, r: &GenerationRequest) -> String {
        let template = self
            .ruleset
            .rules
            .iter()
            .find(|rule| rule.when.matches(r))
            .map(|rule| &rule.respond)
            .unwrap_or(&self.ruleset.default);
        self.render(template, r)
    }
}

impl Backend for ScriptedOracle {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, request: &GenerationRequest) -> Result<Completion, BackendError> {
        Ok(Completion {
            text: self.respond(request),
            backend: BackendKind::Scripted,
        })
    }
}
