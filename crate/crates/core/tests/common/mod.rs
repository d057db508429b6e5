//! Fixtures, generators and property checks shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use ruleflow::dot::export_dot;
use ruleflow::graph::{
    inject_virtual_process, load_graph, ConnectionDocument, DataFlowGraph, GraphDocument,
    InitialRulesDocument, PortKey, PortRef, ProcessDocument,
};
use ruleflow::model::{
    eval_condition, merge_rule_sets, Attribute, CompareOp, Condition, DataRuleSet,
    EvaluationContext, Obligation, Operand, Slot,
};
use ruleflow::notation::{
    condition_to_notation, parse_rule_set, serialize, AttrFilter, FieldFilter, FlowRuleSet, Propagate, Refinement,
};
use ruleflow::oracle::oracle_reason;
use ruleflow::reasoner::{reason, ContextOverrides, ReasoningResult};
use ruleflow::recognizer::{annotate, write_back, RuleDatabase};
use ruleflow::store::{filter_records, StoreFilter, StoredActivation};

// ---------------------------------------------------------------- fixtures

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap()
}

pub fn rules(text: &str) -> DataRuleSet {
    parse_rule_set(text).unwrap()
}

pub struct Scenario {
    pub graph: DataFlowGraph,
    pub result: ReasoningResult,
}

impl Scenario {
    pub fn result_json(&self) -> String {
        self.result.to_json()
    }

    pub fn dot(&self) -> String {
        export_dot(&self.graph, Some(&self.result))
    }
}

pub fn running_example() -> Scenario {
    let graph = load_graph(&fixture("running_example.graph.json")).unwrap();
    let result = reason(&graph, &ContextOverrides::default());
    Scenario { graph, result }
}

/// Three parallel branches merged, with a publish sink reading the plot.
pub fn cyclone() -> Scenario {
    let graph = load_graph(&fixture("cyclone.graph.json")).unwrap();
    let graph =
        inject_virtual_process(&graph, "publish", &[PortRef::output("plot", "figure")]).unwrap();
    let result = reason(&graph, &ContextOverrides::default());
    Scenario { graph, result }
}

pub struct Chain {
    pub first: Scenario,
    pub second: Scenario,
    pub db: RuleDatabase,
}

/// Two graphs chained through the rule database, publishing after the second.
pub fn mt3d() -> Chain {
    let db = RuleDatabase::from_json(&fixture("mt3d.db.json")).unwrap();
    let g1 = load_graph(&fixture("mt3d_create_cmt.graph.json")).unwrap();
    let g1 = annotate(&g1, &db).unwrap();
    let r1 = reason(&g1, &ContextOverrides::default());
    let ids = BTreeMap::from([(PortKey::new("create_cmt", "cmt"), "cmt-solutions".to_string())]);
    let db = write_back(&r1, &ids, &db).unwrap();

    let g2 = load_graph(&fixture("mt3d_simulate.graph.json")).unwrap();
    let g2 = annotate(&g2, &db).unwrap();
    let g2 = inject_virtual_process(&g2, "publish", &[PortRef::output("misfit", "windows")])
        .unwrap();
    let r2 = reason(&g2, &ContextOverrides::default());
    Chain {
        first: Scenario {
            graph: g1,
            result: r1,
        },
        second: Scenario {
            graph: g2,
            result: r2,
        },
        db,
    }
}

// -------------------------------------------------------------- generators

const NAMES: &[&str] = &["a", "b", "c", "d"];
const TYPES: &[&str] = &["str", "column", "url"];
const VALUES: &[&str] = &["1", "2", "DoB", "YroB"];
const CLASSES: &[&str] = &["Cite", "Acknowledge", "Prohibited"];
const LITERALS: &[&str] = &["publish", "preprocess", "import", "research", "alice"];
const ACTIONS: &[&str] = &["preprocess", "publish", "plot"];

fn pick(pool: &'static [&'static str]) -> impl Strategy<Value = String> {
    prop::sample::select(pool).prop_map(str::to_string)
}

pub fn attribute() -> impl Strategy<Value = Attribute> {
    (pick(NAMES), pick(TYPES), pick(VALUES)).prop_map(|(n, t, v)| Attribute::new(n, t, v).unwrap())
}

fn slot() -> impl Strategy<Value = Slot> {
    prop::sample::select(Slot::ALL.to_vec())
}

pub fn condition() -> impl Strategy<Value = Condition> {
    let leaf = prop_oneof![
        1 => Just(Condition::Null),
        6 => (
            slot(),
            prop::bool::ANY,
            prop::option::weighted(0.8, pick(LITERALS))
        )
            .prop_map(|(slot, eq, lit)| Condition::Compare {
                slot,
                op: if eq { CompareOp::Eq } else { CompareOp::Ne },
                operand: lit.map_or(Operand::Any, Operand::Literal),
            }),
    ];
    leaf.prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|c| Condition::Not(Box::new(c))),
            prop::collection::vec(inner.clone(), 2..=3).prop_map(Condition::And),
            prop::collection::vec(inner, 2..=3).prop_map(Condition::Or),
        ]
    })
}

pub fn context() -> impl Strategy<Value = EvaluationContext> {
    let slot = || prop::option::of(pick(LITERALS));
    (slot(), slot(), slot(), slot(), slot(), slot()).prop_map(
        |(action, stage, purpose, user, start_time, process_id)| EvaluationContext {
            action,
            stage,
            purpose,
            user,
            start_time,
            process_id,
        },
    )
}

/// Rule sets of at most 6 attributes and 4 obligations. Within one obligation
/// no two referenced attributes share a name, so every set has a notation.
pub fn rule_set() -> impl Strategy<Value = DataRuleSet> {
    prop::collection::btree_set(attribute(), 0..=6).prop_flat_map(|attrs| {
        let attrs: Vec<Attribute> = attrs.into_iter().collect();
        let n = attrs.len();
        let ob = (
            pick(CLASSES),
            prop::collection::vec(0..n.max(1), 0..=2),
            prop::collection::vec(0..n.max(1), 0..=2),
            condition(),
        );
        let attrs2 = attrs.clone();
        prop::collection::vec(ob, 0..=4).prop_map(move |obs| {
            let mut set = DataRuleSet::from_parts(attrs2.clone(), []).unwrap();
            if attrs2.is_empty() {
                return set;
            }
            for (class, args, validity, cond) in obs {
                let mut names = BTreeSet::new();
                let mut take = |idx: Vec<usize>| -> Vec<Attribute> {
                    idx.into_iter()
                        .map(|i| attrs2[i].clone())
                        .filter(|a| names.insert(a.name.clone()))
                        .collect()
                };
                let args = take(args);
                let validity = take(validity);
                set.insert_obligation(Obligation::new(class, args, validity, cond))
                    .unwrap();
            }
            set
        })
    })
}

fn field(pool: &'static [&'static str]) -> impl Strategy<Value = FieldFilter> {
    prop::option::weighted(0.6, pick(pool)).prop_map(|v| v.map_or(FieldFilter::Any, FieldFilter::Exact))
}

fn attr_filter() -> impl Strategy<Value = AttrFilter> {
    (field(NAMES), field(TYPES), field(VALUES)).prop_map(|(name, value_type, value)| AttrFilter {
        name,
        value_type,
        value,
    })
}

/// Port names used by generated processes, repeated to weight the draw;
/// `zz` never exists.
const IN_PORTS: &[&str] = &["i0", "i0", "i1", "i1", "zz"];
const OUT_PORTS: &[&str] = &["o0", "o0", "o1", "o1", "zz"];

fn refinement() -> impl Strategy<Value = Refinement> {
    (
        field(IN_PORTS),
        field(OUT_PORTS),
        attr_filter(),
        prop::option::of((pick(TYPES), pick(VALUES))),
    )
        .prop_map(|(in_port, out_port, filter, edit)| match edit {
            Some((new_type, new_value)) => Refinement::Edit {
                in_port,
                out_port,
                filter,
                new_type,
                new_value,
            },
            None => Refinement::Delete {
                in_port,
                out_port,
                filter,
            },
        })
}

fn flow_rules() -> impl Strategy<Value = FlowRuleSet> {
    let propagate = (pick(IN_PORTS), prop::collection::vec(pick(OUT_PORTS), 1..=3)).prop_map(
        |(in_port, mut out_ports)| {
            out_ports.dedup();
            Propagate { in_port, out_ports }
        },
    );
    (
        prop::collection::vec(propagate, 1..=3),
        prop::collection::vec(refinement(), 0..=6),
    )
        .prop_map(|(propagates, refinements)| FlowRuleSet {
            propagates,
            refinements,
        })
}

#[derive(Debug, Clone)]
struct ProcessSpec {
    action: String,
    inputs: usize,
    outputs: usize,
    flow: Option<FlowRuleSet>,
    user: Option<String>,
}

fn process_spec() -> impl Strategy<Value = ProcessSpec> {
    (
        pick(ACTIONS),
        1usize..=2,
        prop_oneof![1 => Just(0usize), 5 => 1usize..=2],
        prop::option::weighted(0.7, flow_rules()),
        prop::option::weighted(0.2, pick(LITERALS)),
    )
        .prop_map(|(action, inputs, outputs, flow, user)| ProcessSpec {
            action,
            inputs,
            outputs,
            flow,
            user,
        })
}

/// Random acyclic graphs: at most 5 processes with at most 4 ports each.
/// Producers always precede consumers in id order.
pub fn graph() -> impl Strategy<Value = DataFlowGraph> {
    (
        prop::collection::vec(process_spec(), 0..=5),
        prop::collection::vec(any::<prop::sample::Index>(), 10),
        prop::collection::vec((any::<prop::sample::Index>(), rule_set()), 1..=4),
        prop::option::of(pick(LITERALS)),
        prop::option::of(pick(LITERALS)),
    )
        .prop_map(|(specs, wiring, attachments, purpose, user)| {
            let ids: Vec<String> = (0..specs.len()).map(|i| format!("p{i}")).collect();
            let mut doc = GraphDocument {
                purpose,
                user,
                ..Default::default()
            };
            let mut outputs_so_far: Vec<(String, String)> = Vec::new();
            let mut inputs_all: Vec<(String, String)> = Vec::new();
            let mut wiring = wiring.into_iter().cycle();
            for (id, spec) in ids.iter().zip(&specs) {
                let inputs: Vec<String> = (0..spec.inputs).map(|i| format!("i{i}")).collect();
                let outputs: Vec<String> = (0..spec.outputs).map(|i| format!("o{i}")).collect();
                for port in &inputs {
                    let choice = wiring.next().unwrap();
                    // Slot 0 leaves the port unconnected.
                    let slot = choice.index(outputs_so_far.len() + 1);
                    if slot > 0 {
                        let (from, from_port) = &outputs_so_far[slot - 1];
                        doc.connections.push(ConnectionDocument {
                            from_process: from.clone(),
                            from_port: from_port.clone(),
                            to_process: id.clone(),
                            to_port: port.clone(),
                        });
                    }
                    inputs_all.push((id.clone(), port.clone()));
                }
                for port in &outputs {
                    outputs_so_far.push((id.clone(), port.clone()));
                }
                doc.processes.push(ProcessDocument {
                    id: id.clone(),
                    action: spec.action.clone(),
                    inputs,
                    outputs,
                    flow_rules: spec.flow.as_ref().map(serialize),
                    user: spec.user.clone(),
                    ..Default::default()
                });
            }
            let mut attached: BTreeMap<(String, String), DataRuleSet> = BTreeMap::new();
            if !inputs_all.is_empty() {
                for (index, set) in attachments {
                    let key = index.get(&inputs_all).clone();
                    let merged = match attached.get(&key) {
                        Some(existing) => merge_rule_sets([existing, &set]),
                        None => set,
                    };
                    attached.insert(key, merged);
                }
            }
            for ((process, port), set) in attached {
                doc.initial_rules.push(InitialRulesDocument {
                    process,
                    port,
                    rules: serialize(&set),
                });
            }
            DataFlowGraph::from_document(&doc).expect("generated graphs are valid")
        })
}

pub fn overrides() -> impl Strategy<Value = ContextOverrides> {
    (
        prop::option::weighted(0.3, pick(LITERALS)),
        prop::option::weighted(0.3, pick(LITERALS)),
    )
        .prop_map(|(purpose, user)| ContextOverrides {
            purpose,
            user,
            start_time: None,
        })
}

pub fn records() -> impl Strategy<Value = Vec<StoredActivation>> {
    let record = (
        pick(ACTIONS),
        pick(CLASSES),
        prop::collection::vec(attribute(), 0..=2),
        prop::option::of(pick(LITERALS)),
    )
        .prop_map(|(process, action, args, stage)| StoredActivation {
            graph: "g".into(),
            violation: action == "Prohibited",
            process,
            action,
            args,
            validity: Vec::new(),
            stage,
            recorded_at: "2026-01-01T00:00:00.000Z".into(),
        });
    prop::collection::vec(record, 0..=12)
}

// --------------------------------------------------------------- properties

pub type Check = Result<(), TestCaseError>;

pub fn merge_idempotent(a: &DataRuleSet) -> Check {
    prop_assert_eq!(&merge_rule_sets([a, a]), a);
    prop_assert_eq!(&merge_rule_sets([a]), a);
    Ok(())
}

pub fn merge_commutative(a: &DataRuleSet, b: &DataRuleSet) -> Check {
    prop_assert_eq!(merge_rule_sets([a, b]), merge_rule_sets([b, a]));
    Ok(())
}

pub fn merge_associative(a: &DataRuleSet, b: &DataRuleSet, c: &DataRuleSet) -> Check {
    let left = merge_rule_sets([&merge_rule_sets([a, b]), c]);
    let right = merge_rule_sets([a, &merge_rule_sets([b, c])]);
    prop_assert_eq!(&left, &right);
    prop_assert_eq!(left, merge_rule_sets([a, b, c]));
    Ok(())
}

/// Evaluation is defined everywhere, deterministic, and boolean-consistent.
pub fn eval_total(cond: &Condition, ctx: &EvaluationContext) -> Check {
    let value = eval_condition(cond, ctx);
    prop_assert_eq!(value, eval_condition(cond, ctx));
    prop_assert_eq!(!value, eval_condition(&Condition::Not(Box::new(cond.clone())), ctx));
    let both = Condition::And(vec![cond.clone(), Condition::Not(Box::new(cond.clone()))]);
    prop_assert!(!eval_condition(&both, ctx));
    let either = Condition::Or(vec![cond.clone(), Condition::Not(Box::new(cond.clone()))]);
    prop_assert!(eval_condition(&either, ctx));
    prop_assert!(!eval_condition(&Condition::Null, ctx));
    Ok(())
}

pub fn notation_round_trip(set: &DataRuleSet) -> Check {
    let text = serialize(set);
    let parsed = parse_rule_set(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
    prop_assert_eq!(&parsed, set);
    prop_assert_eq!(serialize(&parsed), text);
    Ok(())
}

fn same_outcome(a: &ReasoningResult, b: &ReasoningResult) -> Check {
    prop_assert_eq!(&a.output_rules, &b.output_rules);
    prop_assert_eq!(a.activation_multiset(), b.activation_multiset());
    Ok(())
}

pub fn oracle_equivalent(graph: &DataFlowGraph, overrides: &ContextOverrides) -> Check {
    same_outcome(&reason(graph, overrides), &oracle_reason(graph, overrides))
}

/// Writing out the default propagation changes nothing.
pub fn default_propagation(graph: &DataFlowGraph) -> Check {
    let mut explicit = graph.clone();
    for p in graph.processes().filter(|p| p.flow_rules.is_none()) {
        explicit
            .set_flow_rules(&p.id, FlowRuleSet::full_propagation(&p.input_ports, &p.output_ports))
            .unwrap();
    }
    let overrides = ContextOverrides::default();
    let a = reason(graph, &overrides);
    let b = reason(&explicit, &overrides);
    prop_assert_eq!(&a, &b);
    same_outcome(&a, &oracle_reason(&explicit, &overrides))
}

/// Refinements that match no propagated port pair, or no attribute, are no-ops.
pub fn refinement_locality(graph: &DataFlowGraph, which: usize) -> Check {
    let Some(target) = graph.processes().nth(which % graph.processes().count().max(1)) else {
        return Ok(());
    };
    let mut rules = target.effective_flow_rules();
    let unmatched_port = Refinement::Delete {
        in_port: FieldFilter::Exact("zz_absent".into()),
        out_port: FieldFilter::Any,
        filter: AttrFilter {
            name: FieldFilter::Any,
            value_type: FieldFilter::Any,
            value: FieldFilter::Any,
        },
    };
    let unmatched_attr = Refinement::Edit {
        in_port: FieldFilter::Any,
        out_port: FieldFilter::Any,
        filter: AttrFilter {
            name: FieldFilter::Any,
            value_type: FieldFilter::Any,
            value: FieldFilter::Exact("no such value".into()),
        },
        new_type: "str".into(),
        new_value: "x".into(),
    };
    let at = which % (rules.refinements.len() + 1);
    rules.refinements.insert(at, unmatched_port);
    rules.refinements.push(unmatched_attr);
    let mut changed = graph.clone();
    changed.set_flow_rules(&target.id, rules).unwrap();
    let overrides = ContextOverrides::default();
    same_outcome(&reason(graph, &overrides), &reason(&changed, &overrides))
}

/// An obligation with every reference spelled out as a full attribute triple.
fn resolved_identity(ob: &Obligation) -> String {
    let triple = |a: &Attribute| format!("{} {} {:?}", a.name, a.value_type, a.value);
    let args: Vec<String> = ob.def.args.iter().map(triple).collect();
    let validity: Vec<String> = ob.validity.iter().map(triple).collect();
    format!(
        "{}({}) [{}] {}",
        ob.def.action_class,
        args.join(", "),
        validity.join(", "),
        condition_to_notation(&ob.condition)
    )
}

/// Result rule sets are duplicate-free and closed; store dedup keeps one
/// record per structural key, in first-seen order.
pub fn dedup_invariants(graph: &DataFlowGraph, records: &[StoredActivation]) -> Check {
    let result = reason(graph, &ContextOverrides::default());
    for (port, set) in &result.output_rules {
        let text = serialize(set);
        let resolved: Vec<String> = set.obligations().iter().map(resolved_identity).collect();
        let unique: BTreeSet<&String> = resolved.iter().collect();
        prop_assert_eq!(resolved.len(), unique.len(), "duplicate obligations at {}", port);
        let lines = text.lines().filter(|l| l.starts_with("obligation")).count();
        prop_assert_eq!(lines, set.obligations().len());
        prop_assert_eq!(&parse_rule_set(&text).unwrap(), set);
        for ob in set.obligations() {
            for r in ob.references() {
                prop_assert!(set.attributes().contains(r), "dangling reference at {}", port);
            }
        }
        prop_assert_eq!(&merge_rule_sets([set, set]), set);
    }

    let filter = StoreFilter {
        dedup: true,
        ..Default::default()
    };
    let deduped = filter_records(records.to_vec(), &filter);
    let keys: Vec<_> = deduped.iter().map(StoredActivation::dedup_key).collect();
    let unique: BTreeSet<_> = keys.iter().cloned().collect();
    prop_assert_eq!(keys.len(), unique.len());
    let all: BTreeSet<_> = records.iter().map(StoredActivation::dedup_key).collect();
    prop_assert_eq!(&unique, &all);
    let mut rest = records.iter();
    for kept in &deduped {
        prop_assert!(rest.any(|r| r == kept), "order not preserved");
    }
    prop_assert_eq!(filter_records(deduped.clone(), &filter), deduped);
    Ok(())
}

/// Deletes remove only what they match; obligations lose their attributes
/// only together with them.
pub fn dangling_preservation(set: &DataRuleSet, filter_value: &str) -> Check {
    let graph_doc = GraphDocument {
        processes: vec![ProcessDocument {
            id: "p".into(),
            action: "preprocess".into(),
            inputs: vec!["i".into()],
            outputs: vec!["o".into()],
            flow_rules: Some(format!("pr(i, o)\ndelete(i, o, *, *, \"{filter_value}\")")),
            ..Default::default()
        }],
        initial_rules: vec![InitialRulesDocument {
            process: "p".into(),
            port: "i".into(),
            rules: serialize(set),
        }],
        ..Default::default()
    };
    let graph = DataFlowGraph::from_document(&graph_doc).unwrap();
    let out = &reason(&graph, &ContextOverrides::default()).output_rules[&PortKey::new("p", "o")];
    for a in set.attributes() {
        prop_assert_eq!(out.attributes().contains(a), a.value != filter_value);
    }
    for ob in set.obligations() {
        let hit = ob.references().any(|r| r.value == filter_value);
        prop_assert_eq!(out.obligations().contains(ob), !hit);
    }
    Ok(())
}
