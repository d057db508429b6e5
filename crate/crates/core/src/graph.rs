//! The data-flow graph the reasoner runs over: processes with named input and
//! output ports, connections between ports, and the data rules attached to
//! source ports.
//!
//! Graphs are loaded from a JSON document (see [`GraphDocument`]) and are
//! immutable once validated; the injection operations return new graphs.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{merge_rule_sets, DataRuleSet};
use crate::notation::{parse_flow_rules, parse_rule_set, serialize, FlowRuleSet, NotationError};

/// Id prefix of injected virtual processes.
pub const VIRTUAL_PREFIX: &str = "virtual:";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Notation {
        context: String,
        source: NotationError,
    },
    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("dangling port reference {0}")]
    DanglingPort(String),
    #[error("duplicate process id `{0}`")]
    DuplicateId(String),
    #[error("duplicate port {0}")]
    DuplicatePort(String),
    #[error("input port {0} has more than one producer")]
    MultipleProducers(String),
    #[error("unknown port {0}")]
    UnknownPort(String),
    #[error("unknown process `{0}`")]
    UnknownProcess(String),
    #[error("a virtual process needs at least one source port")]
    NoSourcePorts,
}

/// A port of a process, direction implied by where it is used.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortKey {
    pub process: String,
    pub port: String,
}

impl PortKey {
    pub fn new(process: impl Into<String>, port: impl Into<String>) -> Self {
        PortKey {
            process: process.into(),
            port: port.into(),
        }
    }

    /// Parses `process:port`, splitting at the last colon.
    pub fn parse(text: &str) -> Option<PortKey> {
        let (process, port) = text.rsplit_once(':')?;
        (!process.is_empty() && !port.is_empty()).then(|| PortKey::new(process, port))
    }
}

impl fmt::Display for PortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.process, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub key: PortKey,
    pub direction: Direction,
}

impl PortRef {
    pub fn output(process: impl Into<String>, port: impl Into<String>) -> Self {
        PortRef {
            key: PortKey::new(process, port),
            direction: Direction::Out,
        }
    }

    pub fn input(process: impl Into<String>, port: impl Into<String>) -> Self {
        PortRef {
            key: PortKey::new(process, port),
            direction: Direction::In,
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::In => "in",
            Direction::Out => "out",
        };
        write!(f, "{} ({dir})", self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessNode {
    pub id: String,
    pub action_type: String,
    pub input_ports: Vec<String>,
    pub output_ports: Vec<String>,
    /// `None` means the default: every input propagates to every output.
    pub flow_rules: Option<FlowRuleSet>,
    pub user: Option<String>,
    pub start_time: Option<String>,
    pub virtual_process: bool,
    /// Input ports injected to carry rules of data the process reads internally.
    pub virtual_inputs: BTreeSet<String>,
}

impl ProcessNode {
    pub fn has_input(&self, port: &str) -> bool {
        self.input_ports.iter().any(|p| p == port)
    }

    pub fn has_output(&self, port: &str) -> bool {
        self.output_ports.iter().any(|p| p == port)
    }

    /// The flow rules in effect, falling back to full propagation.
    pub fn effective_flow_rules(&self) -> FlowRuleSet {
        self.flow_rules
            .clone()
            .unwrap_or_else(|| FlowRuleSet::full_propagation(&self.input_ports, &self.output_ports))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Connection {
    pub from: PortKey,
    pub to: PortKey,
}

/// Identity of the datum read through an input port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataBinding {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uri: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DataFlowGraph {
    processes: BTreeMap<String, ProcessNode>,
    connections: BTreeSet<Connection>,
    initial: BTreeMap<PortKey, DataRuleSet>,
    data: BTreeMap<PortKey, DataBinding>,
    pub purpose: Option<String>,
    pub user: Option<String>,
    pub start_time: Option<String>,
}

// ---------------------------------------------------------------------------
// Document format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GraphDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time: Option<String>,
    #[serde(default)]
    pub processes: Vec<ProcessDocument>,
    #[serde(default)]
    pub connections: Vec<ConnectionDocument>,
    #[serde(default)]
    pub initial_rules: Vec<InitialRulesDocument>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_data: Vec<InputDataDocument>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProcessDocument {
    pub id: String,
    pub action: String,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_rules: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub r#virtual: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub virtual_inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConnectionDocument {
    pub from_process: String,
    pub from_port: String,
    pub to_process: String,
    pub to_port: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialRulesDocument {
    pub process: String,
    pub port: String,
    pub rules: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDataDocument {
    pub process: String,
    pub port: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uri: Option<String>,
}

/// Loads and validates a graph from its JSON document.
pub fn load_graph(json: &str) -> Result<DataFlowGraph, GraphError> {
    let doc: GraphDocument = serde_json::from_str(json)?;
    DataFlowGraph::from_document(&doc)
}

impl DataFlowGraph {
    pub fn from_document(doc: &GraphDocument) -> Result<Self, GraphError> {
        let mut graph = DataFlowGraph {
            purpose: doc.purpose.clone(),
            user: doc.user.clone(),
            start_time: doc.start_time.clone(),
            ..Default::default()
        };

        for p in &doc.processes {
            if graph.processes.contains_key(&p.id) {
                return Err(GraphError::DuplicateId(p.id.clone()));
            }
            for ports in [&p.inputs, &p.outputs] {
                let mut seen = BTreeSet::new();
                for port in ports {
                    if !seen.insert(port) {
                        return Err(GraphError::DuplicatePort(PortKey::new(&p.id, port).to_string()));
                    }
                }
            }
            let flow_rules = p
                .flow_rules
                .as_deref()
                .map(parse_flow_rules)
                .transpose()
                .map_err(|source| GraphError::Notation {
                    context: format!("flow rules of process `{}`", p.id),
                    source,
                })?;
            let virtual_inputs: BTreeSet<String> = p.virtual_inputs.iter().cloned().collect();
            if let Some(port) = virtual_inputs.iter().find(|v| !p.inputs.contains(v)) {
                return Err(GraphError::DanglingPort(PortKey::new(&p.id, port).to_string()));
            }
            graph.processes.insert(
                p.id.clone(),
                ProcessNode {
                    id: p.id.clone(),
                    action_type: p.action.clone(),
                    input_ports: p.inputs.clone(),
                    output_ports: p.outputs.clone(),
                    flow_rules,
                    user: p.user.clone(),
                    start_time: p.start_time.clone(),
                    virtual_process: p.r#virtual,
                    virtual_inputs,
                },
            );
        }

        for c in &doc.connections {
            let from = PortKey::new(&c.from_process, &c.from_port);
            let to = PortKey::new(&c.to_process, &c.to_port);
            graph.check_port(&PortRef {
                key: from.clone(),
                direction: Direction::Out,
            })?;
            graph.check_port(&PortRef {
                key: to.clone(),
                direction: Direction::In,
            })?;
            graph.connections.insert(Connection { from, to });
        }
        let mut producers = BTreeSet::new();
        for c in &graph.connections {
            if !producers.insert(&c.to) {
                return Err(GraphError::MultipleProducers(c.to.to_string()));
            }
        }

        for init in &doc.initial_rules {
            let key = PortKey::new(&init.process, &init.port);
            graph.check_port(&PortRef {
                key: key.clone(),
                direction: Direction::In,
            })?;
            let rules = parse_rule_set(&init.rules).map_err(|source| GraphError::Notation {
                context: format!("initial rules of {key}"),
                source,
            })?;
            graph.attach_rules(key, &rules)?;
        }

        for d in &doc.input_data {
            let key = PortKey::new(&d.process, &d.port);
            graph.check_port(&PortRef {
                key: key.clone(),
                direction: Direction::In,
            })?;
            graph.data.insert(
                key,
                DataBinding {
                    id: d.id.clone(),
                    uri: d.uri.clone(),
                },
            );
        }

        if let Some(cycle) = graph.find_cycle() {
            return Err(GraphError::CycleDetected(cycle));
        }
        Ok(graph)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            purpose: self.purpose.clone(),
            user: self.user.clone(),
            start_time: self.start_time.clone(),
            processes: self
                .processes
                .values()
                .map(|p| ProcessDocument {
                    id: p.id.clone(),
                    action: p.action_type.clone(),
                    inputs: p.input_ports.clone(),
                    outputs: p.output_ports.clone(),
                    flow_rules: p.flow_rules.as_ref().map(serialize),
                    user: p.user.clone(),
                    start_time: p.start_time.clone(),
                    r#virtual: p.virtual_process,
                    virtual_inputs: p.virtual_inputs.iter().cloned().collect(),
                })
                .collect(),
            connections: self
                .connections
                .iter()
                .map(|c| ConnectionDocument {
                    from_process: c.from.process.clone(),
                    from_port: c.from.port.clone(),
                    to_process: c.to.process.clone(),
                    to_port: c.to.port.clone(),
                })
                .collect(),
            initial_rules: self
                .initial
                .iter()
                .map(|(k, rules)| InitialRulesDocument {
                    process: k.process.clone(),
                    port: k.port.clone(),
                    rules: serialize(rules),
                })
                .collect(),
            input_data: self
                .data
                .iter()
                .map(|(k, d)| InputDataDocument {
                    process: k.process.clone(),
                    port: k.port.clone(),
                    id: d.id.clone(),
                    uri: d.uri.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph documents always serialize")
    }

    pub fn processes(&self) -> impl Iterator<Item = &ProcessNode> {
        self.processes.values()
    }

    pub fn process(&self, id: &str) -> Option<&ProcessNode> {
        self.processes.get(id)
    }

    pub fn connections(&self) -> &BTreeSet<Connection> {
        &self.connections
    }

    pub fn initial_rules(&self) -> &BTreeMap<PortKey, DataRuleSet> {
        &self.initial
    }

    pub fn input_data(&self) -> &BTreeMap<PortKey, DataBinding> {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.processes.is_empty()
    }

    pub fn producer_of(&self, input: &PortKey) -> Option<&PortKey> {
        self.connections
            .iter()
            .find(|c| &c.to == input)
            .map(|c| &c.from)
    }

    pub fn consumers_of<'a>(&'a self, output: &'a PortKey) -> impl Iterator<Item = &'a PortKey> {
        self.connections
            .iter()
            .filter(move |c| &c.from == output)
            .map(|c| &c.to)
    }

    /// Output ports feeding no other process, in port-key order.
    pub fn terminal_outputs(&self) -> Vec<PortKey> {
        let fed: BTreeSet<&PortKey> = self.connections.iter().map(|c| &c.from).collect();
        let mut out: Vec<PortKey> = self
            .processes
            .values()
            .flat_map(|p| p.output_ports.iter().map(|o| PortKey::new(&p.id, o)))
            .filter(|k| !fed.contains(k))
            .collect();
        out.sort();
        out
    }

    pub fn check_port(&self, port: &PortRef) -> Result<(), GraphError> {
        let node = self
            .processes
            .get(&port.key.process)
            .ok_or_else(|| GraphError::DanglingPort(port.to_string()))?;
        let exists = match port.direction {
            Direction::In => node.has_input(&port.key.port),
            Direction::Out => node.has_output(&port.key.port),
        };
        if exists {
            Ok(())
        } else {
            Err(GraphError::DanglingPort(port.to_string()))
        }
    }

    /// Merges `rules` into the initial attachment of an input port.
    pub fn attach_rules(&mut self, key: PortKey, rules: &DataRuleSet) -> Result<(), GraphError> {
        self.check_port(&PortRef {
            key: key.clone(),
            direction: Direction::In,
        })?;
        let merged = match self.initial.get(&key) {
            Some(existing) => merge_rule_sets([existing, rules]),
            None => rules.clone(),
        };
        self.initial.insert(key, merged);
        Ok(())
    }

    pub fn set_flow_rules(&mut self, process: &str, rules: FlowRuleSet) -> Result<(), GraphError> {
        let node = self
            .processes
            .get_mut(process)
            .ok_or_else(|| GraphError::UnknownProcess(process.to_string()))?;
        node.flow_rules = Some(rules);
        Ok(())
    }

    pub fn bind_data(&mut self, key: PortKey, binding: DataBinding) -> Result<(), GraphError> {
        self.check_port(&PortRef {
            key: key.clone(),
            direction: Direction::In,
        })?;
        self.data.insert(key, binding);
        Ok(())
    }

    fn successors(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut succ: BTreeMap<&str, BTreeSet<&str>> = self
            .processes
            .keys()
            .map(|k| (k.as_str(), BTreeSet::new()))
            .collect();
        for c in &self.connections {
            succ.entry(c.from.process.as_str())
                .or_default()
                .insert(c.to.process.as_str());
        }
        succ
    }

    fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Done,
        }
        let succ = self.successors();
        let mut marks: BTreeMap<&str, Mark> = succ.keys().map(|k| (*k, Mark::Fresh)).collect();
        let mut path: Vec<&str> = Vec::new();

        fn visit<'a>(
            node: &'a str,
            succ: &BTreeMap<&'a str, BTreeSet<&'a str>>,
            marks: &mut BTreeMap<&'a str, Mark>,
            path: &mut Vec<&'a str>,
        ) -> Option<Vec<String>> {
            marks.insert(node, Mark::Active);
            path.push(node);
            for &next in &succ[node] {
                match marks[next] {
                    Mark::Active => {
                        let start = path.iter().position(|p| *p == next).unwrap();
                        let mut cycle: Vec<String> =
                            path[start..].iter().map(|s| s.to_string()).collect();
                        cycle.push(next.to_string());
                        return Some(cycle);
                    }
                    Mark::Fresh => {
                        if let Some(c) = visit(next, succ, marks, path) {
                            return Some(c);
                        }
                    }
                    Mark::Done => {}
                }
            }
            path.pop();
            marks.insert(node, Mark::Done);
            None
        }

        let roots: Vec<&str> = succ.keys().copied().collect();
        for root in roots {
            if marks[root] == Mark::Fresh {
                if let Some(c) = visit(root, &succ, &mut marks, &mut path) {
                    return Some(c);
                }
            }
        }
        None
    }

    fn fresh_process_id(&self, action_type: &str) -> String {
        let base = format!("{VIRTUAL_PREFIX}{action_type}");
        if !self.processes.contains_key(&base) {
            return base;
        }
        (2..)
            .map(|n| format!("{base}-{n}"))
            .find(|id| !self.processes.contains_key(id))
            .unwrap()
    }
}

/// Process ids with every producer before its consumers; ties go to the smaller id.
pub fn topo_order(graph: &DataFlowGraph) -> Vec<String> {
    let succ = graph.successors();
    let mut indegree: BTreeMap<&str, usize> = succ.keys().map(|k| (*k, 0)).collect();
    for targets in succ.values() {
        for t in targets {
            *indegree.get_mut(t).unwrap() += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<&str>> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| Reverse(*k))
        .collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(Reverse(next)) = ready.pop() {
        order.push(next.to_string());
        for t in &succ[next] {
            let d = indegree.get_mut(t).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(t));
            }
        }
    }
    order
}

/// Adds a sink process of `action_type` reading each of `sources`.
pub fn inject_virtual_process(
    graph: &DataFlowGraph,
    action_type: &str,
    sources: &[PortRef],
) -> Result<DataFlowGraph, GraphError> {
    if sources.is_empty() {
        return Err(GraphError::NoSourcePorts);
    }
    for src in sources {
        if src.direction != Direction::Out || graph.check_port(src).is_err() {
            return Err(GraphError::UnknownPort(src.to_string()));
        }
    }
    let mut next = graph.clone();
    let id = graph.fresh_process_id(action_type);
    let input_ports: Vec<String> = (0..sources.len()).map(|i| format!("in{i}")).collect();
    for (src, port) in sources.iter().zip(&input_ports) {
        next.connections.insert(Connection {
            from: src.key.clone(),
            to: PortKey::new(&id, port),
        });
    }
    next.processes.insert(
        id.clone(),
        ProcessNode {
            id,
            action_type: action_type.to_string(),
            input_ports,
            output_ports: Vec::new(),
            flow_rules: None,
            user: None,
            start_time: None,
            virtual_process: true,
            virtual_inputs: BTreeSet::new(),
        },
    );
    Ok(next)
}

/// Adds a producer-less input port to `process_id` carrying `rules`.
pub fn inject_virtual_input(
    graph: &DataFlowGraph,
    process_id: &str,
    port_name: &str,
    rules: &DataRuleSet,
) -> Result<DataFlowGraph, GraphError> {
    let node = graph
        .process(process_id)
        .ok_or_else(|| GraphError::UnknownProcess(process_id.to_string()))?;
    if node.has_input(port_name) || node.has_output(port_name) {
        return Err(GraphError::DuplicatePort(
            PortKey::new(process_id, port_name).to_string(),
        ));
    }
    let mut next = graph.clone();
    let node = next.processes.get_mut(process_id).unwrap();
    node.input_ports.push(port_name.to_string());
    node.virtual_inputs.insert(port_name.to_string());
    next.initial
        .insert(PortKey::new(process_id, port_name), rules.clone());
    Ok(next)
}
