//! Derivation of output data rules and activated obligations over a
//! data-flow graph.
//!
//! Each process is evaluated in topological order. Obligations are checked
//! against the rules arriving at the process, then its flow rules run in three
//! phases: propagate copies of each input port's rules to output ports, apply
//! refinements in declaration order to the copies whose `(input, output)` tags
//! they match, and merge the copies arriving at each output port.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::graph::{topo_order, DataFlowGraph, PortKey, ProcessNode};
use crate::model::{
    eval_condition, merge_rule_sets, stage, Attribute, DataRuleSet, EvaluationContext, Obligation,
    Slot,
};
use crate::notation::{quote, serialize, AttrFilter, Refinement};

/// Pseudo-process id of the start-of-workflow evaluation.
pub const WORKFLOW_START: &str = "workflow:start";
/// Pseudo-process id of the end-of-workflow evaluation.
pub const WORKFLOW_END: &str = "workflow:end";

/// An obligation whose activation condition held, frozen at activation time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActivatedObligation {
    pub triggering_process: String,
    pub action_class: String,
    pub args: Vec<Attribute>,
    pub validity: BTreeSet<Attribute>,
    pub context: EvaluationContext,
    pub violation: bool,
}

impl ActivatedObligation {
    pub fn new(process: &str, ob: &Obligation, ctx: &EvaluationContext) -> Self {
        ActivatedObligation {
            triggering_process: process.to_string(),
            action_class: ob.def.action_class.clone(),
            args: ob.def.args.clone(),
            validity: ob.validity.clone(),
            context: ctx.clone(),
            violation: ob.is_prohibition(),
        }
    }

    /// One-line rendering: `Class(name type "value", ...) [stage]`.
    pub fn summary(&self) -> String {
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| format!("{} {} {}", a.name, a.value_type, quote(&a.value)))
            .collect();
        let mut line = format!("{}({})", self.action_class, args.join(", "));
        if let Some(stage) = &self.context.stage {
            line.push_str(&format!(" [{stage}]"));
        }
        line
    }
}

/// A flow rule naming a port its process does not have.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Lint {
    pub process: String,
    pub port: String,
}

impl std::fmt::Display for Lint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "flow rule of process `{}` names unknown port `{}`",
            self.process, self.port
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReasoningResult {
    /// Rules of every terminal output port.
    pub output_rules: BTreeMap<PortKey, DataRuleSet>,
    /// Activations in visit order.
    pub activations: Vec<ActivatedObligation>,
    pub lints: Vec<Lint>,
}

impl ReasoningResult {
    pub fn has_violations(&self) -> bool {
        self.activations.iter().any(|a| a.violation)
    }

    /// Activations sorted, for comparisons that ignore order.
    pub fn activation_multiset(&self) -> Vec<ActivatedObligation> {
        let mut all = self.activations.clone();
        all.sort();
        all
    }

    pub fn to_document(&self) -> ResultDocument {
        ResultDocument {
            outputs: self
                .output_rules
                .iter()
                .map(|(k, rules)| OutputDocument {
                    process: k.process.clone(),
                    port: k.port.clone(),
                    rules: serialize(rules),
                })
                .collect(),
            activations: self.activations.iter().map(ActivationDocument::from).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_document())
            .expect("result documents always serialize");
        text.push('\n');
        text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultDocument {
    pub outputs: Vec<OutputDocument>,
    pub activations: Vec<ActivationDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputDocument {
    pub process: String,
    pub port: String,
    pub rules: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivationDocument {
    pub process: String,
    pub action: String,
    pub args: Vec<Attribute>,
    pub validity: Vec<Attribute>,
    pub stage: Option<String>,
    pub violation: bool,
}

impl From<&ActivatedObligation> for ActivationDocument {
    fn from(a: &ActivatedObligation) -> Self {
        ActivationDocument {
            process: a.triggering_process.clone(),
            action: a.action_class.clone(),
            args: a.args.clone(),
            validity: a.validity.iter().cloned().collect(),
            stage: a.context.stage.clone(),
            violation: a.violation,
        }
    }
}

/// Graph-level context values that take precedence over the graph's own.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextOverrides {
    pub purpose: Option<String>,
    pub user: Option<String>,
    pub start_time: Option<String>,
}

/// True iff every literal field of the filter equals the attribute's field.
pub fn match_attr_filter(attr: &Attribute, filter: &AttrFilter) -> bool {
    filter.name.matches(&attr.name)
        && filter.value_type.matches(&attr.value_type)
        && filter.value.matches(&attr.value)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowOutcome {
    pub outputs: BTreeMap<String, DataRuleSet>,
    pub lints: Vec<Lint>,
}

/// Runs a process's flow rules over the rules at its input ports.
///
/// Input ports missing from `in_rules` carry no rules. Every output port of the
/// process appears in the outcome.
pub fn apply_flow(process: &ProcessNode, in_rules: &BTreeMap<String, DataRuleSet>) -> FlowOutcome {
    let rules = process.effective_flow_rules();
    let mut lints = BTreeSet::new();
    let mut lint = |port: &str| {
        lints.insert(Lint {
            process: process.id.clone(),
            port: port.to_string(),
        });
    };

    // Propagated copies keyed by their (input, output) tags.
    let mut copies: BTreeMap<(String, String), DataRuleSet> = BTreeMap::new();
    for pr in &rules.propagates {
        if !process.has_input(&pr.in_port) {
            lint(&pr.in_port);
            continue;
        }
        let source = in_rules.get(&pr.in_port).cloned().unwrap_or_default();
        for out in &pr.out_ports {
            if !process.has_output(out) {
                lint(out);
                continue;
            }
            copies
                .entry((pr.in_port.clone(), out.clone()))
                .or_insert_with(|| source.clone());
        }
    }

    for refinement in &rules.refinements {
        let (in_filter, out_filter) = refinement.ports();
        for (filter, known) in [
            (in_filter, &process.input_ports),
            (out_filter, &process.output_ports),
        ] {
            if let crate::notation::FieldFilter::Exact(port) = filter {
                if !known.contains(port) {
                    lint(port);
                }
            }
        }
        let filter = refinement.filter();
        for ((p_in, p_out), copy) in copies.iter_mut() {
            if !in_filter.matches(p_in) || !out_filter.matches(p_out) {
                continue;
            }
            match refinement {
                Refinement::Delete { .. } => copy.remove_matching(|a| match_attr_filter(a, filter)),
                Refinement::Edit {
                    new_type,
                    new_value,
                    ..
                } => copy.map_attributes(|a| {
                    if match_attr_filter(a, filter) {
                        Attribute {
                            name: a.name.clone(),
                            value_type: new_type.clone(),
                            value: new_value.clone(),
                        }
                    } else {
                        a.clone()
                    }
                }),
            }
        }
    }

    let outputs = process
        .output_ports
        .iter()
        .map(|out| {
            let arriving = copies
                .iter()
                .filter(|((_, p_out), _)| p_out == out)
                .map(|(_, set)| set);
            (out.clone(), merge_rule_sets(arriving).with_hop(&process.id, out))
        })
        .collect();
    FlowOutcome {
        outputs,
        lints: lints.into_iter().collect(),
    }
}

/// One record per obligation of `incoming` whose condition holds under `ctx`.
pub fn check_activation(
    process: &ProcessNode,
    incoming: &DataRuleSet,
    ctx: &EvaluationContext,
) -> Vec<ActivatedObligation> {
    incoming
        .obligations()
        .iter()
        .filter(|ob| eval_condition(&ob.condition, ctx))
        .map(|ob| ActivatedObligation::new(&process.id, ob, ctx))
        .collect()
}

/// Context shared by every evaluation in one graph.
pub(crate) fn graph_context(graph: &DataFlowGraph, overrides: &ContextOverrides) -> EvaluationContext {
    EvaluationContext {
        purpose: overrides.purpose.clone().or_else(|| graph.purpose.clone()),
        user: overrides.user.clone().or_else(|| graph.user.clone()),
        start_time: overrides
            .start_time
            .clone()
            .or_else(|| graph.start_time.clone()),
        ..Default::default()
    }
}

/// Context of a process; process-level provenance wins over graph defaults.
pub(crate) fn process_context(process: &ProcessNode, base: &EvaluationContext) -> EvaluationContext {
    EvaluationContext {
        action: Some(process.action_type.clone()),
        process_id: Some(process.id.clone()),
        user: process.user.clone().or_else(|| base.user.clone()),
        start_time: process.start_time.clone().or_else(|| base.start_time.clone()),
        ..base.clone()
    }
}

/// Evaluates stage-conditioned obligations at a workflow boundary.
pub(crate) fn boundary_activations<'a>(
    pseudo_process: &str,
    stage_value: &str,
    obligations: impl IntoIterator<Item = &'a Obligation>,
    base: &EvaluationContext,
) -> Vec<ActivatedObligation> {
    let ctx = EvaluationContext {
        stage: Some(stage_value.to_string()),
        ..base.clone()
    };
    obligations
        .into_iter()
        .filter(|ob| ob.condition.mentions(Slot::Stage) && eval_condition(&ob.condition, &ctx))
        .map(|ob| ActivatedObligation::new(pseudo_process, ob, &ctx))
        .collect()
}

/// Reasons over the whole graph.
pub fn reason(graph: &DataFlowGraph, overrides: &ContextOverrides) -> ReasoningResult {
    let base = graph_context(graph, overrides);
    let mut result = ReasoningResult::default();

    let initial = merge_rule_sets(graph.initial_rules().values());
    result.activations.extend(boundary_activations(
        WORKFLOW_START,
        stage::START_OF_WORKFLOW,
        initial.obligations(),
        &base,
    ));

    let mut produced: BTreeMap<PortKey, DataRuleSet> = BTreeMap::new();
    for id in topo_order(graph) {
        let process = graph.process(&id).expect("topological order lists graph processes");
        let mut in_rules = BTreeMap::new();
        let mut imported = DataRuleSet::new();
        for port in &process.input_ports {
            let key = PortKey::new(&id, port);
            let mut arriving = DataRuleSet::new();
            if let Some(src) = graph.producer_of(&key) {
                if let Some(rules) = produced.get(src) {
                    arriving.absorb(rules);
                }
            }
            if let Some(attached) = graph.initial_rules().get(&key) {
                arriving.absorb(attached);
                imported.absorb(attached);
            }
            arriving.push_hop(crate::model::Hop {
                process: id.clone(),
                port: port.clone(),
            });
            in_rules.insert(port.clone(), arriving);
        }

        let incoming = merge_rule_sets(in_rules.values());
        let ctx = process_context(process, &base);
        let import_ctx = EvaluationContext {
            stage: Some(stage::IMPORT.to_string()),
            ..ctx.clone()
        };
        for ob in incoming.obligations() {
            let ctx = if imported.obligations().contains(ob) {
                &import_ctx
            } else {
                &ctx
            };
            if eval_condition(&ob.condition, ctx) {
                result
                    .activations
                    .push(ActivatedObligation::new(&id, ob, ctx));
            }
        }

        let outcome = apply_flow(process, &in_rules);
        result.lints.extend(outcome.lints);
        for (port, rules) in outcome.outputs {
            produced.insert(PortKey::new(&id, port), rules);
        }
    }

    for key in graph.terminal_outputs() {
        let rules = produced.remove(&key).unwrap_or_default();
        result.output_rules.insert(key, rules);
    }
    let terminal = merge_rule_sets(result.output_rules.values());
    result.activations.extend(boundary_activations(
        WORKFLOW_END,
        stage::END_OF_WORKFLOW,
        terminal.obligations(),
        &base,
    ));
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::{parse_flow_rules, parse_rule_set, FieldFilter};

    fn node(inputs: &[&str], outputs: &[&str], flow: Option<&str>) -> ProcessNode {
        ProcessNode {
            id: "p".into(),
            action_type: "preprocess".into(),
            input_ports: inputs.iter().map(|s| s.to_string()).collect(),
            output_ports: outputs.iter().map(|s| s.to_string()).collect(),
            flow_rules: flow.map(|f| parse_flow_rules(f).unwrap()),
            user: None,
            start_time: None,
            virtual_process: false,
            virtual_inputs: Default::default(),
        }
    }

    fn rules(text: &str) -> DataRuleSet {
        parse_rule_set(text).unwrap()
    }

    const INPUT1: &str = r#"attribute(pf, column "DoB")
attribute(ru, url "report.example.ac")
obligation(report ru, [pf], action = *)"#;

    const FLOW: &str = r#"pr(input1, [output1, output2])
delete(input1, output1, *, column, "DoB")
edit(input1, output2, *, column, "DoB", column, "YroB")"#;

    fn filter(name: Option<&str>, ty: Option<&str>, value: Option<&str>) -> AttrFilter {
        let f = |x: Option<&str>| x.map_or(FieldFilter::Any, |s| FieldFilter::Exact(s.into()));
        AttrFilter {
            name: f(name),
            value_type: f(ty),
            value: f(value),
        }
    }

    #[test]
    fn attribute_filters() {
        let pf = Attribute::new("pf", "column", "DoB").unwrap();
        let ru = Attribute::new("ru", "url", "report.example.ac").unwrap();
        assert!(match_attr_filter(&pf, &filter(None, Some("column"), Some("DoB"))));
        assert!(match_attr_filter(&pf, &filter(None, None, None)));
        assert!(!match_attr_filter(&ru, &filter(None, Some("column"), Some("DoB"))));
    }

    #[test]
    fn running_example_flow() {
        let p = node(&["input1"], &["output1", "output2"], Some(FLOW));
        let out = apply_flow(&p, &BTreeMap::from([("input1".to_string(), rules(INPUT1))]));
        assert_eq!(
            out.outputs["output1"],
            rules(r#"attribute(ru, url "report.example.ac")"#)
        );
        assert_eq!(
            out.outputs["output2"],
            rules(
                r#"attribute(pf, column "YroB")
attribute(ru, url "report.example.ac")
obligation(report ru, [pf], action = *)"#
            )
        );
        assert!(out.lints.is_empty());
    }

    #[test]
    fn default_propagation_copies_to_every_output() {
        let p = node(&["in"], &["a", "b"], None);
        let s = rules(INPUT1);
        let out = apply_flow(&p, &BTreeMap::from([("in".to_string(), s.clone())]));
        assert_eq!(out.outputs["a"], s);
        assert_eq!(out.outputs["b"], s);
    }

    #[test]
    fn edits_chain_in_order() {
        let flow = r#"pr(in, out)
edit(in, out, *, column, "DoB", column, "YroB")
edit(in, out, *, column, "YroB", column, "Decade")"#;
        let p = node(&["in"], &["out"], Some(flow));
        let out = apply_flow(&p, &BTreeMap::from([("in".to_string(), rules(INPUT1))]));
        let pf = out.outputs["out"].attribute_named("pf").unwrap();
        assert_eq!(pf.value, "Decade");
        let ob = out.outputs["out"].obligations().iter().next().unwrap();
        assert!(ob.validity.contains(pf));
    }

    #[test]
    fn unknown_ports_lint_and_do_nothing() {
        let flow = r#"pr(in, [out, ghost])
delete(nope, out, *, *, *)"#;
        let p = node(&["in"], &["out"], Some(flow));
        let s = rules(INPUT1);
        let out = apply_flow(&p, &BTreeMap::from([("in".to_string(), s.clone())]));
        assert_eq!(out.outputs["out"], s);
        let ports: Vec<&str> = out.lints.iter().map(|l| l.port.as_str()).collect();
        assert_eq!(ports, vec!["ghost", "nope"]);
    }

    #[test]
    fn explicit_empty_flow_rules_propagate_nothing() {
        let p = node(&["in"], &["out"], Some(""));
        let out = apply_flow(&p, &BTreeMap::from([("in".to_string(), rules(INPUT1))]));
        assert!(out.outputs["out"].is_empty());
    }

    #[test]
    fn activation_follows_condition() {
        let p = node(&["in"], &[], None);
        let ctx = EvaluationContext {
            action: Some("preprocess".into()),
            ..Default::default()
        };
        let hits = check_activation(&p, &rules(INPUT1), &ctx);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].action_class, "report");
        assert_eq!(hits[0].args[0].value, "report.example.ac");
        assert!(!hits[0].violation);

        let publish_only = rules(
            r#"attribute(a, str "x")
obligation(Cite a, [], action = publish)"#,
        );
        assert!(check_activation(&p, &publish_only, &ctx).is_empty());
    }

    #[test]
    fn prohibited_is_flagged() {
        let p = node(&["in"], &[], None);
        let set = rules(
            r#"attribute(c, url "x")
obligation(Prohibited, [c], action = publish)"#,
        );
        let ctx = EvaluationContext {
            action: Some("publish".into()),
            ..Default::default()
        };
        let hits = check_activation(&p, &set, &ctx);
        assert!(hits[0].violation);
    }

    #[test]
    fn boundary_only_considers_stage_conditions() {
        let set = rules(
            r#"attribute(a, str "x")
obligation(A, [], action = *)
obligation(B, [], stage = start-of-workflow)
obligation(C, [], stage = import)"#,
        );
        let hits = boundary_activations(
            WORKFLOW_START,
            stage::START_OF_WORKFLOW,
            set.obligations(),
            &EvaluationContext::default(),
        );
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].action_class, "B");
        assert_eq!(hits[0].context.action, None);
    }
}
