//! Rule database: attaches stored data rules and flow rules to a graph before
//! reasoning, and stores derived rules for later graphs.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{inject_virtual_input, DataFlowGraph, GraphError, PortKey};
use crate::model::DataRuleSet;
use crate::notation::{parse_flow_rules, parse_rule_set, serialize, FlowRuleSet, NotationError};
use crate::reasoner::ReasoningResult;

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("rule database I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid rule database: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{section}[{index}]: {source}")]
    Rules {
        section: &'static str,
        index: usize,
        source: NotationError,
    },
    #[error("derived rules of `{id}`: {source}")]
    Derived { id: String, source: NotationError },
    #[error("{section}[{index}]: matcher has no fields")]
    EmptyMatch { section: &'static str, index: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("no rules for output port {0}")]
    UnknownOutputPort(String),
}

/// Matches `text` against a pattern where `*` stands for any run of characters.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, rest) = parts.split_first().unwrap();
    let (last, middle) = rest.split_last().unwrap();
    let Some(mut remaining) = text.strip_prefix(first) else {
        return false;
    };
    for part in middle {
        match remaining.find(part) {
            Some(at) => remaining = &remaining[at + part.len()..],
            None => return false,
        }
    }
    remaining.len() >= last.len() && remaining.ends_with(last)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DataMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uri_pattern: Option<String>,
    /// Pattern over `process:port`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProcessMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataMatcher {
    #[serde(rename = "match")]
    pub matcher: DataMatch,
    pub rules: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProcessMatcher {
    #[serde(rename = "match")]
    pub matcher: ProcessMatch,
    pub flow_rules: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    #[serde(rename = "match")]
    pub matcher: ProcessMatch,
    pub port: String,
    pub rules: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDatabase {
    #[serde(default)]
    pub data: Vec<DataMatcher>,
    #[serde(default)]
    pub process: Vec<ProcessMatcher>,
    #[serde(default)]
    pub injections: Vec<Injection>,
    /// Canonical rules text per data id, written back from earlier results.
    #[serde(default)]
    pub derived: BTreeMap<String, String>,
}

/// A database with every rules text parsed.
struct Compiled {
    data: Vec<(DataMatch, DataRuleSet)>,
    process: Vec<(ProcessMatch, FlowRuleSet)>,
    injections: Vec<(ProcessMatch, String, DataRuleSet)>,
    derived: BTreeMap<String, DataRuleSet>,
}

impl DataMatch {
    fn is_empty(&self) -> bool {
        self.data_id.is_none() && self.uri_pattern.is_none() && self.port.is_none()
    }

    fn matches(&self, graph: &DataFlowGraph, key: &PortKey) -> bool {
        let binding = graph.input_data().get(key);
        let field = |pattern: &Option<String>, value: Option<&str>| match (pattern, value) {
            (None, _) => true,
            (Some(p), Some(v)) => glob_match(p, v),
            (Some(_), None) => false,
        };
        field(&self.data_id, binding.map(|b| b.id.as_str()))
            && field(&self.uri_pattern, binding.and_then(|b| b.uri.as_deref()))
            && field(&self.port, Some(&key.to_string()))
    }
}

impl ProcessMatch {
    fn is_empty(&self) -> bool {
        self.process_id.is_none() && self.action_type.is_none()
    }

    fn matches(&self, id: &str, action_type: &str) -> bool {
        self.process_id.as_deref().is_none_or(|p| glob_match(p, id))
            && self
                .action_type
                .as_deref()
                .is_none_or(|p| glob_match(p, action_type))
    }
}

impl RuleDatabase {
    pub fn from_json(text: &str) -> Result<Self, RecognizerError> {
        let db: RuleDatabase = serde_json::from_str(text)?;
        db.compile()?;
        Ok(db)
    }

    pub fn to_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("rule databases always serialize");
        text.push('\n');
        text
    }

    /// Reads a database file under a shared lock.
    pub fn load(path: &Path) -> Result<Self, RecognizerError> {
        let mut file = File::open(path)?;
        file.lock_shared()?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        file.unlock()?;
        Self::from_json(&text)
    }

    /// Writes the database file under an exclusive lock.
    pub fn save(&self, path: &Path) -> Result<(), RecognizerError> {
        let mut file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        file.lock()?;
        file.set_len(0)?;
        file.write_all(self.to_json().as_bytes())?;
        file.sync_all()?;
        file.unlock()?;
        Ok(())
    }

    fn compile(&self) -> Result<Compiled, RecognizerError> {
        let rules_err = |section, index| move |source| RecognizerError::Rules {
            section,
            index,
            source,
        };
        let mut compiled = Compiled {
            data: Vec::new(),
            process: Vec::new(),
            injections: Vec::new(),
            derived: BTreeMap::new(),
        };
        for (index, m) in self.data.iter().enumerate() {
            if m.matcher.is_empty() {
                return Err(RecognizerError::EmptyMatch { section: "data", index });
            }
            let rules = parse_rule_set(&m.rules).map_err(rules_err("data", index))?;
            compiled.data.push((m.matcher.clone(), rules));
        }
        for (index, m) in self.process.iter().enumerate() {
            if m.matcher.is_empty() {
                return Err(RecognizerError::EmptyMatch { section: "process", index });
            }
            let rules = parse_flow_rules(&m.flow_rules).map_err(rules_err("process", index))?;
            compiled.process.push((m.matcher.clone(), rules));
        }
        for (index, m) in self.injections.iter().enumerate() {
            if m.matcher.is_empty() {
                return Err(RecognizerError::EmptyMatch { section: "injections", index });
            }
            let rules = parse_rule_set(&m.rules).map_err(rules_err("injections", index))?;
            compiled
                .injections
                .push((m.matcher.clone(), m.port.clone(), rules));
        }
        for (id, text) in &self.derived {
            let rules = parse_rule_set(text).map_err(|source| RecognizerError::Derived {
                id: id.clone(),
                source,
            })?;
            compiled.derived.insert(id.clone(), rules);
        }
        Ok(compiled)
    }
}

/// Attaches matching database rules to a copy of `graph`.
///
/// Data rules (matchers and derived entries) go to producer-less, non-virtual
/// input ports, merged with any existing attachment. The first matching flow
/// rules are set on processes that have none. Injections add a virtual input
/// port, or merge into it when it already exists.
pub fn annotate(graph: &DataFlowGraph, db: &RuleDatabase) -> Result<DataFlowGraph, RecognizerError> {
    let compiled = db.compile()?;
    let mut next = graph.clone();

    let sources: Vec<PortKey> = graph
        .processes()
        .flat_map(|p| {
            p.input_ports
                .iter()
                .filter(|port| !p.virtual_inputs.contains(*port))
                .map(|port| PortKey::new(&p.id, port))
        })
        .filter(|key| graph.producer_of(key).is_none())
        .collect();
    for key in sources {
        for (matcher, rules) in &compiled.data {
            if matcher.matches(graph, &key) {
                next.attach_rules(key.clone(), rules)?;
            }
        }
        let derived = graph
            .input_data()
            .get(&key)
            .and_then(|b| compiled.derived.get(&b.id));
        if let Some(rules) = derived {
            next.attach_rules(key.clone(), rules)?;
        }
    }

    for p in graph.processes().filter(|p| p.flow_rules.is_none()) {
        let found = compiled
            .process
            .iter()
            .find(|(m, _)| m.matches(&p.id, &p.action_type));
        if let Some((_, rules)) = found {
            next.set_flow_rules(&p.id, rules.clone())?;
        }
    }

    for (matcher, port, rules) in &compiled.injections {
        let targets: Vec<String> = next
            .processes()
            .filter(|p| matcher.matches(&p.id, &p.action_type))
            .map(|p| p.id.clone())
            .collect();
        for id in targets {
            let existing = next.process(&id).unwrap().virtual_inputs.contains(port);
            if existing {
                next.attach_rules(PortKey::new(&id, port), rules)?;
            } else {
                next = inject_virtual_input(&next, &id, port, rules)?;
            }
        }
    }
    Ok(next)
}

/// Stores the canonical rules of mapped output ports under their data ids.
pub fn write_back(
    result: &ReasoningResult,
    data_ids: &BTreeMap<PortKey, String>,
    db: &RuleDatabase,
) -> Result<RuleDatabase, RecognizerError> {
    let mut next = db.clone();
    for (port, id) in data_ids {
        let rules = result
            .output_rules
            .get(port)
            .ok_or_else(|| RecognizerError::UnknownOutputPort(port.to_string()))?;
        next.derived.insert(id.clone(), serialize(rules));
    }
    Ok(next)
}
