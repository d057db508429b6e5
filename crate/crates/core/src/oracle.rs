//! Naive interpreter of the successor-state axioms, used as an independent
//! check of [`crate::reasoner::reason`].
//!
//! The whole graph lives in one fluent database. Every fact carries its full
//! port history, so duplicates arriving through different routes are distinct
//! facts here, while the reasoner collapses them into sets. Flow rules are
//! applied as a sequence of actions, each producing the successor situation
//! clause by clause:
//!
//! - `PropAttr` holds after `a` if it held and `a` neither deletes it, edits it
//!   to a different type/value, nor ends its output port; or it is the edited
//!   image of a `PropAttr`; or it is an `Attr` at the propagated input port.
//! - `PropObligation` follows the same shape. A delete removes the obligation
//!   when it removes an attribute the obligation is bound to; an edit carries
//!   the binding over to the rewritten attribute.
//! - `Attr` / `Obligation` hold if they held and their port was not
//!   propagated from, or they are the `PropAttr` / `PropObligation` ended at
//!   their output port.
//!
//! Connections between processes are a `Transfer` action that extends the
//! history of every fact at an output port with each consuming input port.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{DataFlowGraph, PortKey};
use crate::model::{
    eval_condition, stage, Attribute, DataRuleSet, EvaluationContext, Obligation, Slot,
};
use crate::notation::{AttrFilter, FieldFilter, Refinement};
use crate::reasoner::{
    match_attr_filter, ActivatedObligation, ContextOverrides, ReasoningResult, WORKFLOW_END,
    WORKFLOW_START,
};

pub type History = Vec<PortKey>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AttrFact {
    pub attr: Attribute,
    pub history: History,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ObligationFact {
    pub ob: Obligation,
    pub history: History,
    pub port: PortKey,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PropObligationFact {
    pub ob: Obligation,
    pub history: History,
    pub p_in: PortKey,
    pub p_out: PortKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Pr {
        p_in: PortKey,
        p_sout: Vec<PortKey>,
    },
    Edit {
        process: String,
        p_in: FieldFilter,
        p_out: FieldFilter,
        filter: AttrFilter,
        t_new: String,
        v_new: String,
    },
    Delete {
        process: String,
        p_in: FieldFilter,
        p_out: FieldFilter,
        filter: AttrFilter,
    },
    End {
        p_out: PortKey,
    },
    Transfer {
        from: PortKey,
        to: Vec<PortKey>,
    },
}

/// A situation: the fluents that hold plus the actions that led to it.
#[derive(Debug, Clone, Default)]
pub struct Situation {
    pub attr: BTreeSet<AttrFact>,
    pub prop_attr: BTreeSet<AttrFact>,
    pub obligation: BTreeSet<ObligationFact>,
    pub prop_obligation: BTreeSet<PropObligationFact>,
    pub log: Vec<Action>,
}

fn last(h: &History) -> Option<&PortKey> {
    h.last()
}

/// The `(p_in, p_out)` pair a propagated history ends with.
fn tags(h: &History) -> Option<(&PortKey, &PortKey)> {
    match h.as_slice() {
        [.., a, b] => Some((a, b)),
        _ => None,
    }
}

fn refinement_applies(
    process: &str,
    p_in_filter: &FieldFilter,
    p_out_filter: &FieldFilter,
    p_in: &PortKey,
    p_out: &PortKey,
) -> bool {
    p_in.process == process
        && p_out.process == process
        && p_in_filter.matches(&p_in.port)
        && p_out_filter.matches(&p_out.port)
}

impl Situation {
    /// Initial situation: one `Attr` / `Obligation` per attached rule.
    pub fn initial(graph: &DataFlowGraph) -> Self {
        let mut s = Situation::default();
        for (port, rules) in graph.initial_rules() {
            for attr in rules.attributes() {
                s.attr.insert(AttrFact {
                    attr: attr.clone(),
                    history: vec![port.clone()],
                });
            }
            for ob in rules.obligations() {
                s.obligation.insert(ObligationFact {
                    ob: ob.clone(),
                    history: vec![port.clone()],
                    port: port.clone(),
                });
            }
        }
        s
    }

    /// `do(a, s)`.
    pub fn apply(&self, a: &Action) -> Situation {
        let mut next = Situation {
            log: self.log.clone(),
            ..Default::default()
        };
        next.log.push(a.clone());

        // PropAttr
        for f in &self.prop_attr {
            let (p_in, p_out) = tags(&f.history).expect("propagated facts carry two tags");
            let survives = match a {
                Action::Delete {
                    process,
                    p_in: fi,
                    p_out: fo,
                    filter,
                } => !(refinement_applies(process, fi, fo, p_in, p_out)
                    && match_attr_filter(&f.attr, filter)),
                Action::Edit {
                    process,
                    p_in: fi,
                    p_out: fo,
                    filter,
                    t_new,
                    v_new,
                } => !(refinement_applies(process, fi, fo, p_in, p_out)
                    && match_attr_filter(&f.attr, filter)
                    && (t_new != &f.attr.value_type || v_new != &f.attr.value)),
                Action::End { p_out: ended } => ended != p_out,
                _ => true,
            };
            if survives {
                next.prop_attr.insert(f.clone());
            }
            if let Action::Edit {
                process,
                p_in: fi,
                p_out: fo,
                filter,
                t_new,
                v_new,
            } = a
            {
                if refinement_applies(process, fi, fo, p_in, p_out)
                    && match_attr_filter(&f.attr, filter)
                {
                    next.prop_attr.insert(AttrFact {
                        attr: Attribute {
                            name: f.attr.name.clone(),
                            value_type: t_new.clone(),
                            value: v_new.clone(),
                        },
                        history: f.history.clone(),
                    });
                }
            }
        }
        if let Action::Pr { p_in, p_sout } = a {
            for f in self.attr.iter().filter(|f| last(&f.history) == Some(p_in)) {
                for p_out in p_sout {
                    let mut history = f.history.clone();
                    history.push(p_out.clone());
                    next.prop_attr.insert(AttrFact {
                        attr: f.attr.clone(),
                        history,
                    });
                }
            }
        }

        // PropObligation
        for f in &self.prop_obligation {
            match a {
                Action::Delete {
                    process,
                    p_in: fi,
                    p_out: fo,
                    filter,
                } if refinement_applies(process, fi, fo, &f.p_in, &f.p_out) => {
                    let removed = self.prop_attr.iter().any(|pa| {
                        tags(&pa.history) == Some((&f.p_in, &f.p_out))
                            && match_attr_filter(&pa.attr, filter)
                            && f.ob.references().any(|r| r == &pa.attr)
                    });
                    if !removed {
                        next.prop_obligation.insert(f.clone());
                    }
                }
                Action::Edit {
                    process,
                    p_in: fi,
                    p_out: fo,
                    filter,
                    t_new,
                    v_new,
                } if refinement_applies(process, fi, fo, &f.p_in, &f.p_out) => {
                    let edited: BTreeSet<&Attribute> = self
                        .prop_attr
                        .iter()
                        .filter(|pa| {
                            tags(&pa.history) == Some((&f.p_in, &f.p_out))
                                && match_attr_filter(&pa.attr, filter)
                        })
                        .map(|pa| &pa.attr)
                        .collect();
                    let ob = f.ob.map_references(|r| {
                        if edited.contains(r) {
                            Attribute {
                                name: r.name.clone(),
                                value_type: t_new.clone(),
                                value: v_new.clone(),
                            }
                        } else {
                            r.clone()
                        }
                    });
                    next.prop_obligation.insert(PropObligationFact { ob, ..f.clone() });
                }
                Action::End { p_out } if p_out == &f.p_out => {}
                _ => {
                    next.prop_obligation.insert(f.clone());
                }
            }
        }
        if let Action::Pr { p_in, p_sout } = a {
            for f in self.obligation.iter().filter(|f| &f.port == p_in) {
                for p_out in p_sout {
                    let mut history = f.history.clone();
                    history.push(p_out.clone());
                    next.prop_obligation.insert(PropObligationFact {
                        ob: f.ob.clone(),
                        history,
                        p_in: p_in.clone(),
                        p_out: p_out.clone(),
                    });
                }
            }
        }

        // Attr
        for f in &self.attr {
            let consumed = match a {
                Action::Pr { p_in, .. } => last(&f.history) == Some(p_in),
                Action::Transfer { from, .. } => last(&f.history) == Some(from),
                _ => false,
            };
            if !consumed {
                next.attr.insert(f.clone());
            }
            if let Action::Transfer { from, to } = a {
                if last(&f.history) == Some(from) {
                    for port in to {
                        let mut history = f.history.clone();
                        history.push(port.clone());
                        next.attr.insert(AttrFact {
                            attr: f.attr.clone(),
                            history,
                        });
                    }
                }
            }
        }
        if let Action::End { p_out } = a {
            for f in self.prop_attr.iter().filter(|f| last(&f.history) == Some(p_out)) {
                next.attr.insert(f.clone());
            }
        }

        // Obligation
        for f in &self.obligation {
            let consumed = match a {
                Action::Pr { p_in, .. } => &f.port == p_in,
                Action::Transfer { from, .. } => &f.port == from,
                _ => false,
            };
            if !consumed {
                next.obligation.insert(f.clone());
            }
            if let Action::Transfer { from, to } = a {
                if &f.port == from {
                    for port in to {
                        let mut history = f.history.clone();
                        history.push(port.clone());
                        next.obligation.insert(ObligationFact {
                            ob: f.ob.clone(),
                            history,
                            port: port.clone(),
                        });
                    }
                }
            }
        }
        if let Action::End { p_out } = a {
            for f in self.prop_obligation.iter().filter(|f| &f.p_out == p_out) {
                next.obligation.insert(ObligationFact {
                    ob: f.ob.clone(),
                    history: f.history.clone(),
                    port: p_out.clone(),
                });
            }
        }

        next
    }

    /// The data rule set holding at `port`.
    pub fn rules_at(&self, port: &PortKey) -> DataRuleSet {
        let attrs = self
            .attr
            .iter()
            .filter(|f| last(&f.history) == Some(port))
            .map(|f| f.attr.clone());
        let obs = self
            .obligation
            .iter()
            .filter(|f| &f.port == port)
            .map(|f| f.ob.clone());
        DataRuleSet::from_parts(attrs, obs)
            .unwrap_or_else(|e| panic!("fluents at {port} violate reference closure: {e}"))
    }
}

/// Processes in dependency order, smallest ready id first.
fn naive_order(graph: &DataFlowGraph) -> Vec<String> {
    let mut done: BTreeSet<String> = BTreeSet::new();
    let mut order = Vec::new();
    let ids: Vec<String> = graph.processes().map(|p| p.id.clone()).collect();
    while order.len() < ids.len() {
        let next = ids
            .iter()
            .filter(|id| !done.contains(*id))
            .find(|id| {
                graph
                    .connections()
                    .iter()
                    .filter(|c| &c.to.process == *id)
                    .all(|c| done.contains(&c.from.process))
            })
            .expect("graphs are acyclic")
            .clone();
        done.insert(next.clone());
        order.push(next);
    }
    order
}

/// Evaluates the graph by replaying every flow rule as an action.
pub fn oracle_reason(graph: &DataFlowGraph, overrides: &ContextOverrides) -> ReasoningResult {
    let base = EvaluationContext {
        purpose: overrides.purpose.clone().or_else(|| graph.purpose.clone()),
        user: overrides.user.clone().or_else(|| graph.user.clone()),
        start_time: overrides
            .start_time
            .clone()
            .or_else(|| graph.start_time.clone()),
        ..Default::default()
    };
    let mut result = ReasoningResult::default();
    let mut s = Situation::initial(graph);

    let boundary = |pseudo: &str, stage_value: &str, obs: BTreeSet<&Obligation>| {
        let ctx = EvaluationContext {
            stage: Some(stage_value.to_string()),
            ..base.clone()
        };
        obs.into_iter()
            .filter(|ob| ob.condition.mentions(Slot::Stage) && eval_condition(&ob.condition, &ctx))
            .map(|ob| ActivatedObligation::new(pseudo, ob, &ctx))
            .collect::<Vec<_>>()
    };
    let initial_obs: BTreeSet<&Obligation> = s.obligation.iter().map(|f| &f.ob).collect();
    let start = boundary(WORKFLOW_START, stage::START_OF_WORKFLOW, initial_obs);
    result.activations.extend(start);

    for id in naive_order(graph) {
        let process = graph.process(&id).unwrap();
        let inputs: BTreeSet<PortKey> = process
            .input_ports
            .iter()
            .map(|p| PortKey::new(&id, p))
            .collect();

        // Activation at the beginning of the process.
        let ctx = EvaluationContext {
            action: Some(process.action_type.clone()),
            process_id: Some(id.clone()),
            user: process.user.clone().or_else(|| base.user.clone()),
            start_time: process
                .start_time
                .clone()
                .or_else(|| base.start_time.clone()),
            ..base.clone()
        };
        let mut arriving: BTreeMap<&Obligation, bool> = BTreeMap::new();
        for f in s.obligation.iter().filter(|f| inputs.contains(&f.port)) {
            *arriving.entry(&f.ob).or_default() |= f.history.len() == 1;
        }
        for (ob, imported) in arriving {
            let ctx = if imported {
                EvaluationContext {
                    stage: Some(stage::IMPORT.to_string()),
                    ..ctx.clone()
                }
            } else {
                ctx.clone()
            };
            if eval_condition(&ob.condition, &ctx) {
                result
                    .activations
                    .push(ActivatedObligation::new(&id, ob, &ctx));
            }
        }

        // Action sequence: propagations grouped per input port, refinements, ends.
        let rules = process.effective_flow_rules();
        let mut grouped: Vec<(String, Vec<String>)> = Vec::new();
        for pr in &rules.propagates {
            match grouped.iter_mut().find(|(p, _)| p == &pr.in_port) {
                Some((_, outs)) => {
                    for o in &pr.out_ports {
                        if !outs.contains(o) {
                            outs.push(o.clone());
                        }
                    }
                }
                None => grouped.push((pr.in_port.clone(), pr.out_ports.clone())),
            }
        }
        let mut actions: Vec<Action> = grouped
            .into_iter()
            .map(|(p_in, outs)| Action::Pr {
                p_in: PortKey::new(&id, p_in),
                p_sout: outs.into_iter().map(|o| PortKey::new(&id, o)).collect(),
            })
            .collect();
        for r in &rules.refinements {
            actions.push(match r {
                Refinement::Delete {
                    in_port,
                    out_port,
                    filter,
                } => Action::Delete {
                    process: id.clone(),
                    p_in: in_port.clone(),
                    p_out: out_port.clone(),
                    filter: filter.clone(),
                },
                Refinement::Edit {
                    in_port,
                    out_port,
                    filter,
                    new_type,
                    new_value,
                } => Action::Edit {
                    process: id.clone(),
                    p_in: in_port.clone(),
                    p_out: out_port.clone(),
                    filter: filter.clone(),
                    t_new: new_type.clone(),
                    v_new: new_value.clone(),
                },
            });
        }
        for out in &process.output_ports {
            actions.push(Action::End {
                p_out: PortKey::new(&id, out),
            });
        }
        for out in &process.output_ports {
            let from = PortKey::new(&id, out);
            let to: Vec<PortKey> = graph
                .connections()
                .iter()
                .filter(|c| c.from == from)
                .map(|c| c.to.clone())
                .collect();
            if !to.is_empty() {
                actions.push(Action::Transfer { from, to });
            }
        }
        for a in &actions {
            s = s.apply(a);
        }
    }

    let fed: BTreeSet<&PortKey> = graph.connections().iter().map(|c| &c.from).collect();
    for p in graph.processes() {
        for out in &p.output_ports {
            let key = PortKey::new(&p.id, out);
            if !fed.contains(&key) {
                let rules = s.rules_at(&key);
                result.output_rules.insert(key, rules);
            }
        }
    }
    let terminal_obs: BTreeSet<&Obligation> = s
        .obligation
        .iter()
        .filter(|f| result.output_rules.contains_key(&f.port))
        .map(|f| &f.ob)
        .collect();
    let end = boundary(WORKFLOW_END, stage::END_OF_WORKFLOW, terminal_obs);
    result.activations.extend(end);
    result
}
