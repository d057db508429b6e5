//! Core types of the rule language: attributes, obligations, activation
//! conditions and the data rule sets that carry them.
//!
//! A [`DataRuleSet`] is a set in the mathematical sense. Attributes are
//! identified by their full `(name, type, value)` triple and obligations refer
//! to attributes by that identity, so two rule sets coming from different
//! sources can be merged without names re-binding each other's obligations.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token matching any value in filters and activation conditions.
pub const WILDCARD: &str = "*";

/// Stage values assigned by the reasoner.
pub mod stage {
    pub const START_OF_WORKFLOW: &str = "start-of-workflow";
    pub const END_OF_WORKFLOW: &str = "end-of-workflow";
    pub const IMPORT: &str = "import";
}

/// Obligated action class whose activation is reported as a violation.
pub const PROHIBITED: &str = "Prohibited";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("unresolved attribute reference `{0}`")]
    UnresolvedReference(String),
    #[error("invalid attribute: {0}")]
    InvalidAttribute(String),
    #[error("unknown condition slot `{0}`")]
    UnknownSlot(String),
}

/// A `(name, type, value)` property carried with the data.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(rename = "type")]
    pub value_type: String,
    pub value: String,
}

impl Attribute {
    pub fn new(
        name: impl Into<String>,
        value_type: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<Self, RuleError> {
        let attr = Attribute {
            name: name.into(),
            value_type: value_type.into(),
            value: value.into(),
        };
        attr.validate()?;
        Ok(attr)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        for (field, text) in [
            ("name", &self.name),
            ("type", &self.value_type),
            ("value", &self.value),
        ] {
            if text.is_empty() {
                return Err(RuleError::InvalidAttribute(format!("empty {field}")));
            }
            if text == WILDCARD {
                return Err(RuleError::InvalidAttribute(format!(
                    "{field} of `{}` is the wildcard",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({} {:?})", self.name, self.value_type, self.value)
    }
}

/// Context slots an activation condition can test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Action,
    Stage,
    Purpose,
    User,
    StartTime,
    ProcessId,
}

impl Slot {
    pub const ALL: [Slot; 6] = [
        Slot::Action,
        Slot::Stage,
        Slot::Purpose,
        Slot::User,
        Slot::StartTime,
        Slot::ProcessId,
    ];

    /// Resolves a slot name, including the `process` alias for `action`.
    pub fn from_name(name: &str) -> Result<Slot, RuleError> {
        match name {
            "action" | "process" => Ok(Slot::Action),
            "stage" => Ok(Slot::Stage),
            "purpose" => Ok(Slot::Purpose),
            "user" => Ok(Slot::User),
            "startTime" => Ok(Slot::StartTime),
            "processId" => Ok(Slot::ProcessId),
            other => Err(RuleError::UnknownSlot(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Action => "action",
            Slot::Stage => "stage",
            Slot::Purpose => "purpose",
            Slot::User => "user",
            Slot::StartTime => "startTime",
            Slot::ProcessId => "processId",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operand {
    Any,
    Literal(String),
}

/// Boolean activation condition over context slots.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    /// Never activates.
    Null,
    Compare {
        slot: Slot,
        op: CompareOp,
        operand: Operand,
    },
    Not(Box<Condition>),
    And(Vec<Condition>),
    Or(Vec<Condition>),
}

impl Condition {
    pub fn eq(slot: Slot, literal: impl Into<String>) -> Self {
        Condition::Compare {
            slot,
            op: CompareOp::Eq,
            operand: Operand::Literal(literal.into()),
        }
    }

    pub fn any(slot: Slot) -> Self {
        Condition::Compare {
            slot,
            op: CompareOp::Eq,
            operand: Operand::Any,
        }
    }

    /// Whether any leaf of the condition tests `slot`.
    pub fn mentions(&self, slot: Slot) -> bool {
        match self {
            Condition::Null => false,
            Condition::Compare { slot: s, .. } => *s == slot,
            Condition::Not(inner) => inner.mentions(slot),
            Condition::And(items) | Condition::Or(items) => items.iter().any(|c| c.mentions(slot)),
        }
    }
}

/// Runtime information an activation condition is evaluated against.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvaluationContext {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub purpose: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_time: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process_id: Option<String>,
}

impl EvaluationContext {
    pub fn slot(&self, slot: Slot) -> Option<&str> {
        match slot {
            Slot::Action => self.action.as_deref(),
            Slot::Stage => self.stage.as_deref(),
            Slot::Purpose => self.purpose.as_deref(),
            Slot::User => self.user.as_deref(),
            Slot::StartTime => self.start_time.as_deref(),
            Slot::ProcessId => self.process_id.as_deref(),
        }
    }
}

/// Evaluates a condition. A missing slot never equals a literal, and `= *`
/// holds whether or not the slot is set.
pub fn eval_condition(cond: &Condition, ctx: &EvaluationContext) -> bool {
    match cond {
        Condition::Null => false,
        Condition::Compare { slot, op, operand } => {
            let current = ctx.slot(*slot);
            match (op, operand) {
                (CompareOp::Eq, Operand::Any) => true,
                (CompareOp::Ne, Operand::Any) => false,
                (CompareOp::Eq, Operand::Literal(lit)) => current == Some(lit.as_str()),
                (CompareOp::Ne, Operand::Literal(lit)) => current != Some(lit.as_str()),
            }
        }
        Condition::Not(inner) => !eval_condition(inner, ctx),
        Condition::And(items) => items.iter().all(|c| eval_condition(c, ctx)),
        Condition::Or(items) => items.iter().any(|c| eval_condition(c, ctx)),
    }
}

/// The action to perform: an obligated action class and its attribute arguments.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObligationDef {
    pub action_class: String,
    pub args: Vec<Attribute>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Obligation {
    pub def: ObligationDef,
    pub validity: BTreeSet<Attribute>,
    pub condition: Condition,
}

impl Obligation {
    pub fn new(
        action_class: impl Into<String>,
        args: Vec<Attribute>,
        validity: impl IntoIterator<Item = Attribute>,
        condition: Condition,
    ) -> Self {
        Obligation {
            def: ObligationDef {
                action_class: action_class.into(),
                args,
            },
            validity: validity.into_iter().collect(),
            condition,
        }
    }

    /// Every attribute the obligation is bound to, in arguments or validity binding.
    pub fn references(&self) -> impl Iterator<Item = &Attribute> {
        self.def.args.iter().chain(self.validity.iter())
    }

    pub fn references_any(&self, pred: impl Fn(&Attribute) -> bool) -> bool {
        self.references().any(pred)
    }

    /// Rewrites every reference through `f`.
    pub fn map_references(&self, f: impl Fn(&Attribute) -> Attribute) -> Obligation {
        Obligation {
            def: ObligationDef {
                action_class: self.def.action_class.clone(),
                args: self.def.args.iter().map(&f).collect(),
            },
            validity: self.validity.iter().map(&f).collect(),
            condition: self.condition.clone(),
        }
    }

    pub fn is_prohibition(&self) -> bool {
        self.def.action_class == PROHIBITED
    }
}

/// One hop in a rule set's audit trail.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub process: String,
    pub port: String,
}

/// The policy attached to one datum.
///
/// Equality ignores the audit history.
#[derive(Debug, Clone, Default)]
pub struct DataRuleSet {
    attributes: BTreeSet<Attribute>,
    obligations: BTreeSet<Obligation>,
    history: Vec<Hop>,
}

impl PartialEq for DataRuleSet {
    fn eq(&self, other: &Self) -> bool {
        self.attributes == other.attributes && self.obligations == other.obligations
    }
}

impl Eq for DataRuleSet {}

impl DataRuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a rule set, checking reference closure.
    pub fn from_parts(
        attributes: impl IntoIterator<Item = Attribute>,
        obligations: impl IntoIterator<Item = Obligation>,
    ) -> Result<Self, RuleError> {
        let mut set = DataRuleSet::new();
        for attr in attributes {
            set.insert_attribute(attr)?;
        }
        for ob in obligations {
            set.insert_obligation(ob)?;
        }
        Ok(set)
    }

    pub fn attributes(&self) -> &BTreeSet<Attribute> {
        &self.attributes
    }

    pub fn obligations(&self) -> &BTreeSet<Obligation> {
        &self.obligations
    }

    pub fn history(&self) -> &[Hop] {
        &self.history
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty() && self.obligations.is_empty()
    }

    pub fn insert_attribute(&mut self, attr: Attribute) -> Result<bool, RuleError> {
        attr.validate()?;
        Ok(self.attributes.insert(attr))
    }

    pub fn insert_obligation(&mut self, ob: Obligation) -> Result<bool, RuleError> {
        if let Some(missing) = ob.references().find(|a| !self.attributes.contains(*a)) {
            return Err(RuleError::UnresolvedReference(missing.name.clone()));
        }
        Ok(self.obligations.insert(ob))
    }

    pub fn push_hop(&mut self, hop: Hop) {
        self.history.push(hop);
    }

    pub fn with_hop(mut self, process: &str, port: &str) -> Self {
        self.push_hop(Hop {
            process: process.to_string(),
            port: port.to_string(),
        });
        self
    }

    /// Removes every attribute matching `pred` and every obligation bound to one.
    pub fn remove_matching(&mut self, pred: impl Fn(&Attribute) -> bool) {
        self.attributes.retain(|a| !pred(a));
        self.obligations.retain(|ob| !ob.references_any(&pred));
    }

    /// Rewrites attributes through `f`; obligations follow the rewritten identities.
    pub fn map_attributes(&mut self, f: impl Fn(&Attribute) -> Attribute) {
        self.attributes = self.attributes.iter().map(&f).collect();
        self.obligations = self.obligations.iter().map(|ob| ob.map_references(&f)).collect();
    }

    /// Unions `other` into `self`.
    pub fn absorb(&mut self, other: &DataRuleSet) {
        self.attributes.extend(other.attributes.iter().cloned());
        self.obligations.extend(other.obligations.iter().cloned());
        self.history.extend(other.history.iter().cloned());
    }

    /// Rule set holding the obligations of `self` not present in `other`, plus all attributes.
    pub fn without_obligations_of(&self, other: &DataRuleSet) -> DataRuleSet {
        DataRuleSet {
            attributes: self.attributes.clone(),
            obligations: self.obligations.difference(&other.obligations).cloned().collect(),
            history: self.history.clone(),
        }
    }

    /// Resolves an attribute reference by name, for callers holding bare names.
    pub fn attribute_named(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

/// Set union of rule sets; duplicated entries collapse and audit trails concatenate.
pub fn merge_rule_sets<'a>(sets: impl IntoIterator<Item = &'a DataRuleSet>) -> DataRuleSet {
    let mut merged = DataRuleSet::new();
    for set in sets {
        merged.absorb(set);
    }
    merged
}
