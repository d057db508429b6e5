//! User notation for data rules and flow rules: parsing and canonical
//! serialization.
//!
//! ```text
//! attribute(pf, column "DoB")
//! attribute(ru, url "report.example.ac")
//! obligation(report ru, [pf], action = *)
//!
//! pr(input1, [output1, output2])
//! delete(input1, output1, *, column, "DoB")
//! edit(input1, output2, *, column, "DoB", column, "YroB")
//! ```
//!
//! Keywords are case-insensitive. The parser accepts the surface variations
//! found in hand-typeset policy encodings:
//!
//! - the type of an attribute may be omitted (defaults to `str`) or separated
//!   from the value by a comma;
//! - a quote displaced by typesetting (`"https://a.org/by"/4.0/`) is repaired
//!   by concatenating the quoted and unquoted pieces up to the next delimiter;
//! - a quote that is never closed before the next statement extends to the
//!   last `)` on its line;
//! - the slot alias `process` reads as `action`; `null` is the never-active
//!   condition.
//!
//! Serialization emits one statement per line with lowercase keywords,
//! explicit types and quoted values. Because attributes are identified by
//! their full triple, an obligation whose referenced name is bound to a
//! different attribute at that point of the output is preceded by a
//! re-declaration of the attribute it needs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{
    Attribute, CompareOp, Condition, DataRuleSet, Obligation, Operand, RuleError, Slot, WILDCARD,
};

/// Type given to attributes declared without one.
pub const DEFAULT_TYPE: &str = "str";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NotationError {
    #[error("{line}:{col}: syntax error, expected {expected}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
    },
    #[error("{line}:{col}: `{action}` takes {expected} arguments, found {found}")]
    Arity {
        line: usize,
        col: usize,
        action: String,
        expected: usize,
        found: usize,
    },
    #[error("{line}:{col}: {source}")]
    Rule {
        line: usize,
        col: usize,
        source: RuleError,
    },
    #[error(transparent)]
    Resolve(#[from] RuleError),
}

/// A data-rule declaration as written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleStatement {
    AttributeDecl {
        name: String,
        value_type: String,
        value: String,
    },
    ObligationDecl {
        action_class: String,
        args: Vec<String>,
        validity: Vec<String>,
        condition: Condition,
    },
}

/// A flow-rule filter field: a literal or the wildcard.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldFilter {
    Any,
    Exact(String),
}

impl FieldFilter {
    pub fn matches(&self, text: &str) -> bool {
        match self {
            FieldFilter::Any => true,
            FieldFilter::Exact(expected) => expected == text,
        }
    }
}

/// Attribute filter `(name, type, value)` of a refinement.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttrFilter {
    pub name: FieldFilter,
    pub value_type: FieldFilter,
    pub value: FieldFilter,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Propagate {
    pub in_port: String,
    pub out_ports: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Refinement {
    Edit {
        in_port: FieldFilter,
        out_port: FieldFilter,
        filter: AttrFilter,
        new_type: String,
        new_value: String,
    },
    Delete {
        in_port: FieldFilter,
        out_port: FieldFilter,
        filter: AttrFilter,
    },
}

impl Refinement {
    pub fn ports(&self) -> (&FieldFilter, &FieldFilter) {
        match self {
            Refinement::Edit {
                in_port, out_port, ..
            }
            | Refinement::Delete {
                in_port, out_port, ..
            } => (in_port, out_port),
        }
    }

    pub fn filter(&self) -> &AttrFilter {
        match self {
            Refinement::Edit { filter, .. } | Refinement::Delete { filter, .. } => filter,
        }
    }
}

/// Per-process rewrite program: propagations, then ordered refinements.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct FlowRuleSet {
    pub propagates: Vec<Propagate>,
    pub refinements: Vec<Refinement>,
}

impl FlowRuleSet {
    /// `pr(input, [every output])` for each input port.
    pub fn full_propagation(inputs: &[String], outputs: &[String]) -> Self {
        FlowRuleSet {
            propagates: inputs
                .iter()
                .map(|i| Propagate {
                    in_port: i.clone(),
                    out_ports: outputs.to_vec(),
                })
                .collect(),
            refinements: Vec::new(),
        }
    }
}

/// Any statement of the notation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Data(RuleStatement),
    Propagate(Propagate),
    Refinement(Refinement),
}

/// Joins typeset continuation lines (lines starting with `↳` or `↪`) onto the
/// previous line, separated by one space.
pub fn unwrap_continuations(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed
            .strip_prefix('↳')
            .or_else(|| trimmed.strip_prefix('↪'))
        {
            while out.ends_with('\n') {
                out.pop();
            }
            let kept = out.trim_end().len();
            out.truncate(kept);
            out.push(' ');
            out.push_str(rest.trim());
            out.push('\n');
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Parses every statement in `text`, data and flow rules alike.
pub fn parse_statements(text: &str) -> Result<Vec<Statement>, NotationError> {
    let mut parser = Parser::new(text);
    let mut out = Vec::new();
    loop {
        parser.skip_ws();
        if parser.at_end() {
            return Ok(out);
        }
        out.push(parser.statement()?);
    }
}

/// Parses attribute and obligation declarations.
pub fn parse_data_rules(text: &str) -> Result<Vec<RuleStatement>, NotationError> {
    let mut parser = Parser::new(text);
    let mut out = Vec::new();
    loop {
        parser.skip_ws();
        if parser.at_end() {
            return Ok(out);
        }
        let start = parser.pos;
        match parser.statement()? {
            Statement::Data(stmt) => out.push(stmt),
            _ => return Err(parser.syntax_at(start, "`attribute` or `obligation`")),
        }
    }
}

/// Parses `pr`, `edit` and `delete` statements.
pub fn parse_flow_rules(text: &str) -> Result<FlowRuleSet, NotationError> {
    let mut parser = Parser::new(text);
    let mut rules = FlowRuleSet::default();
    loop {
        parser.skip_ws();
        if parser.at_end() {
            return Ok(rules);
        }
        let start = parser.pos;
        match parser.statement()? {
            Statement::Propagate(p) => rules.propagates.push(p),
            Statement::Refinement(r) => rules.refinements.push(r),
            Statement::Data(_) => return Err(parser.syntax_at(start, "`pr`, `edit` or `delete`")),
        }
    }
}

/// Parses and resolves a data rule set.
pub fn parse_rule_set(text: &str) -> Result<DataRuleSet, NotationError> {
    Ok(resolve_rule_set(&parse_data_rules(text)?)?)
}

/// Binds obligation references to attributes.
///
/// A name resolves to the closest declaration before the obligation, or
/// failing that to the first one after it.
pub fn resolve_rule_set(statements: &[RuleStatement]) -> Result<DataRuleSet, RuleError> {
    let mut declared: Vec<(usize, Attribute)> = Vec::new();
    for (idx, stmt) in statements.iter().enumerate() {
        if let RuleStatement::AttributeDecl {
            name,
            value_type,
            value,
        } = stmt
        {
            declared.push((idx, Attribute::new(name, value_type, value)?));
        }
    }
    let lookup = |at: usize, name: &str| -> Result<Attribute, RuleError> {
        let before = declared
            .iter()
            .rev()
            .find(|(idx, a)| *idx < at && a.name == name);
        let after = || declared.iter().find(|(idx, a)| *idx > at && a.name == name);
        before
            .or_else(after)
            .map(|(_, a)| a.clone())
            .ok_or_else(|| RuleError::UnresolvedReference(name.to_string()))
    };

    let mut set = DataRuleSet::new();
    for (_, attr) in &declared {
        set.insert_attribute(attr.clone())?;
    }
    for (idx, stmt) in statements.iter().enumerate() {
        if let RuleStatement::ObligationDecl {
            action_class,
            args,
            validity,
            condition,
        } = stmt
        {
            let args = args
                .iter()
                .map(|n| lookup(idx, n))
                .collect::<Result<Vec<_>, _>>()?;
            let validity = validity
                .iter()
                .map(|n| lookup(idx, n))
                .collect::<Result<Vec<_>, _>>()?;
            set.insert_obligation(Obligation::new(
                action_class.clone(),
                args,
                validity,
                condition.clone(),
            ))?;
        }
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

const STATEMENT_KEYWORDS: [&str; 5] = ["attribute", "obligation", "pr", "edit", "delete"];
const CONDITION_KEYWORDS: [&str; 4] = ["and", "or", "not", "null"];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == ':'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | ':')
}

/// Whether `text` is written bare by the serializer.
pub fn is_identifier(text: &str) -> bool {
    let mut chars = text.chars();
    matches!(chars.next(), Some(c) if is_ident_start(c)) && chars.all(is_ident_continue)
}

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || matches!(c, ',' | '(' | ')' | '[' | ']' | '"')
}

enum Field {
    Any,
    Text(String),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn line_col(&self, pos: usize) -> (usize, usize) {
        let before = &self.src[..pos.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        (line, col)
    }

    fn syntax_at(&self, pos: usize, expected: &str) -> NotationError {
        let (line, col) = self.line_col(pos);
        NotationError::Syntax {
            line,
            col,
            expected: expected.to_string(),
        }
    }

    fn syntax(&self, expected: &str) -> NotationError {
        self.syntax_at(self.pos, expected)
    }

    fn rule_error(&self, pos: usize, source: RuleError) -> NotationError {
        let (line, col) = self.line_col(pos);
        NotationError::Rule { line, col, source }
    }

    fn expect(&mut self, c: char) -> Result<(), NotationError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.syntax(&format!("`{c}`")))
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Option<String> {
        self.skip_ws();
        let rest = self.rest();
        let mut chars = rest.char_indices();
        match chars.next() {
            Some((_, c)) if is_ident_start(c) => {}
            _ => return None,
        }
        let end = chars
            .find(|(_, c)| !is_ident_continue(*c))
            .map_or(rest.len(), |(i, _)| i);
        self.pos += end;
        Some(rest[..end].to_string())
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, NotationError> {
        self.ident().ok_or_else(|| self.syntax(what))
    }

    /// Looks at the next identifier without consuming it.
    fn peek_keyword(&self) -> Option<String> {
        let mut probe = Parser {
            src: self.src,
            pos: self.pos,
        };
        probe.ident().map(|w| w.to_ascii_lowercase())
    }

    fn bare_word(&mut self) -> Option<String> {
        self.skip_ws();
        let rest = self.rest();
        let end = rest
            .char_indices()
            .find(|(_, c)| is_delimiter(*c))
            .map_or(rest.len(), |(i, _)| i);
        if end == 0 {
            return None;
        }
        self.pos += end;
        Some(rest[..end].to_string())
    }

    fn statement(&mut self) -> Result<Statement, NotationError> {
        self.skip_ws();
        let start = self.pos;
        let keyword = self
            .ident()
            .map(|w| w.to_ascii_lowercase())
            .ok_or_else(|| self.syntax("statement keyword"))?;
        match keyword.as_str() {
            "attribute" => self.attribute().map(Statement::Data),
            "obligation" => self.obligation().map(Statement::Data),
            "pr" => self.propagate().map(Statement::Propagate),
            "edit" | "delete" => self.refinement(&keyword, start).map(Statement::Refinement),
            _ => Err(self.syntax_at(start, "statement keyword")),
        }
    }

    fn attribute(&mut self) -> Result<RuleStatement, NotationError> {
        self.expect('(')?;
        let name = self.expect_ident("attribute name")?;
        self.expect(',')?;
        self.skip_ws();
        let (value_type, value) = if self.peek() == Some('"') {
            (DEFAULT_TYPE.to_string(), self.text_value()?)
        } else {
            let word_pos = self.pos;
            let word = self
                .bare_word()
                .ok_or_else(|| self.syntax("attribute type or value"))?;
            self.skip_ws();
            if self.peek() == Some(')') {
                (DEFAULT_TYPE.to_string(), word)
            } else {
                if !is_identifier(&word) {
                    return Err(self.syntax_at(word_pos, "attribute type"));
                }
                self.eat(',');
                (word, self.text_value()?)
            }
        };
        self.expect(')')?;
        Ok(RuleStatement::AttributeDecl {
            name,
            value_type,
            value,
        })
    }

    fn obligation(&mut self) -> Result<RuleStatement, NotationError> {
        self.expect('(')?;
        let action_class = self.expect_ident("obligated action class")?;
        let mut args = Vec::new();
        while let Some(arg) = self.ident() {
            args.push(arg);
        }
        self.expect(',')?;
        self.expect('[')?;
        let mut validity = Vec::new();
        if !self.eat(']') {
            loop {
                validity.push(self.expect_ident("attribute reference")?);
                if self.eat(']') {
                    break;
                }
                self.expect(',')?;
            }
        }
        self.expect(',')?;
        let condition = self.condition()?;
        self.expect(')')?;
        Ok(RuleStatement::ObligationDecl {
            action_class,
            args,
            validity,
            condition,
        })
    }

    fn port_name(&mut self) -> Result<String, NotationError> {
        let pos = self.pos;
        match self.field()? {
            Field::Text(name) => Ok(name),
            Field::Any => Err(self.syntax_at(pos, "port name")),
        }
    }

    fn propagate(&mut self) -> Result<Propagate, NotationError> {
        self.expect('(')?;
        let in_port = self.port_name()?;
        self.expect(',')?;
        let mut out_ports = Vec::new();
        if self.eat('[') {
            while !self.eat(']') {
                if !out_ports.is_empty() {
                    self.expect(',')?;
                }
                out_ports.push(self.port_name()?);
            }
        } else {
            out_ports.push(self.port_name()?);
        }
        self.expect(')')?;
        Ok(Propagate { in_port, out_ports })
    }

    fn refinement(&mut self, keyword: &str, start: usize) -> Result<Refinement, NotationError> {
        self.expect('(')?;
        let mut fields = Vec::new();
        let mut positions = Vec::new();
        loop {
            self.skip_ws();
            positions.push(self.pos);
            fields.push(self.field()?);
            if self.eat(')') {
                break;
            }
            self.expect(',')?;
        }
        let expected = if keyword == "edit" { 7 } else { 5 };
        if fields.len() != expected {
            let (line, col) = self.line_col(start);
            return Err(NotationError::Arity {
                line,
                col,
                action: keyword.to_string(),
                expected,
                found: fields.len(),
            });
        }
        let filter_of = |f: Field| match f {
            Field::Any => FieldFilter::Any,
            Field::Text(t) => FieldFilter::Exact(t),
        };
        let mut it = fields.into_iter();
        let in_port = filter_of(it.next().unwrap());
        let out_port = filter_of(it.next().unwrap());
        let filter = AttrFilter {
            name: filter_of(it.next().unwrap()),
            value_type: filter_of(it.next().unwrap()),
            value: filter_of(it.next().unwrap()),
        };
        if keyword == "delete" {
            return Ok(Refinement::Delete {
                in_port,
                out_port,
                filter,
            });
        }
        let new_type = match it.next().unwrap() {
            Field::Text(t) if is_identifier(&t) => t,
            _ => return Err(self.syntax_at(positions[5], "new attribute type")),
        };
        let new_value = match it.next().unwrap() {
            Field::Text(t) if !t.is_empty() && t != WILDCARD => t,
            _ => return Err(self.syntax_at(positions[6], "new attribute value")),
        };
        Ok(Refinement::Edit {
            in_port,
            out_port,
            filter,
            new_type,
            new_value,
        })
    }

    /// Filter field, port or operand: `*`, a (possibly repaired) string, or a bare word.
    fn field(&mut self) -> Result<Field, NotationError> {
        self.skip_ws();
        match self.peek() {
            Some('"') => Ok(Field::Text(self.text_value()?)),
            Some('*') => {
                let next = self.rest()[1..].chars().next();
                if next.is_none_or(is_delimiter) {
                    self.bump();
                    Ok(Field::Any)
                } else {
                    self.bare_word()
                        .map(Field::Text)
                        .ok_or_else(|| self.syntax("value"))
                }
            }
            _ => self
                .bare_word()
                .map(Field::Text)
                .ok_or_else(|| self.syntax("identifier, string or `*`")),
        }
    }

    /// A value literal: a bare word, or quoted pieces with typesetting repairs.
    fn text_value(&mut self) -> Result<String, NotationError> {
        self.skip_ws();
        if self.peek() != Some('"') {
            return self.bare_word().ok_or_else(|| self.syntax("value"));
        }
        let mut out = String::new();
        loop {
            match self.quoted_segment()? {
                Segment::Closed(text) => out.push_str(&text),
                Segment::Unterminated(text) => {
                    out.push_str(&text);
                    return Ok(out);
                }
            }
            // A piece glued to the closing quote continues the same literal.
            match self.peek() {
                Some(c) if !c.is_whitespace() && !matches!(c, ')' | ',' | ']') => {}
                _ => return Ok(out),
            }
            while let Some(c) = self.peek() {
                if matches!(c, '"' | ')' | ',' | ']' | '\n') {
                    break;
                }
                out.push(c);
                self.bump();
            }
            if self.peek() != Some('"') {
                let kept = out.trim_end().len();
                out.truncate(kept);
                return Ok(out);
            }
        }
    }

    fn quoted_segment(&mut self) -> Result<Segment, NotationError> {
        let open = self.pos;
        self.bump();
        let mut text = String::new();
        loop {
            match self.bump() {
                Some('"') => return Ok(Segment::Closed(text)),
                Some('\\') => match self.bump() {
                    Some('"') => text.push('"'),
                    Some('\\') => text.push('\\'),
                    Some('n') => text.push('\n'),
                    Some('t') => text.push('\t'),
                    Some(other) => {
                        text.push('\\');
                        text.push(other);
                    }
                    None => return self.unterminated(open),
                },
                Some('\n') => {
                    if starts_statement(self.rest()) {
                        return self.unterminated(open);
                    }
                    text.push('\n');
                }
                Some(c) => text.push(c),
                None => return self.unterminated(open),
            }
        }
    }

    /// An unclosed quote ends at the last `)` of the line it opened on.
    fn unterminated(&mut self, open: usize) -> Result<Segment, NotationError> {
        let body_start = open + 1;
        let line = &self.src[body_start..];
        let line = &line[..line.find('\n').unwrap_or(line.len())];
        match line.rfind(')') {
            Some(close) => {
                self.pos = body_start + close;
                Ok(Segment::Unterminated(line[..close].trim_end().to_string()))
            }
            None => Err(self.syntax_at(open, "closing quote")),
        }
    }

    fn condition(&mut self) -> Result<Condition, NotationError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Condition, NotationError> {
        let mut items = vec![self.and_expr()?];
        while self.peek_keyword().as_deref() == Some("or") {
            self.ident();
            items.push(self.and_expr()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Condition::Or(items)
        })
    }

    fn and_expr(&mut self) -> Result<Condition, NotationError> {
        let mut items = vec![self.term()?];
        while self.peek_keyword().as_deref() == Some("and") {
            self.ident();
            items.push(self.term()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Condition::And(items)
        })
    }

    fn term(&mut self) -> Result<Condition, NotationError> {
        if self.eat('(') {
            let inner = self.or_expr()?;
            self.expect(')')?;
            return Ok(inner);
        }
        self.skip_ws();
        let slot_pos = self.pos;
        let word = self.expect_ident("condition slot, `not` or `(`")?;
        if word.eq_ignore_ascii_case("not") {
            return Ok(Condition::Not(Box::new(self.term()?)));
        }
        if word.eq_ignore_ascii_case("null") {
            return Ok(Condition::Null);
        }
        let slot = Slot::from_name(&word).map_err(|e| self.rule_error(slot_pos, e))?;
        self.skip_ws();
        let op = if self.rest().starts_with("!=") {
            self.pos += 2;
            CompareOp::Ne
        } else if self.rest().starts_with('=') {
            self.pos += 1;
            CompareOp::Eq
        } else {
            return Err(self.syntax("`=` or `!=`"));
        };
        let operand = match self.field()? {
            Field::Any => Operand::Any,
            Field::Text(t) => Operand::Literal(t),
        };
        Ok(Condition::Compare { slot, op, operand })
    }
}

enum Segment {
    Closed(String),
    Unterminated(String),
}

fn starts_statement(line: &str) -> bool {
    let line = line.trim_start_matches([' ', '\t']);
    let word_len = line
        .char_indices()
        .find(|(_, c)| !c.is_ascii_alphabetic())
        .map_or(line.len(), |(i, _)| i);
    let word = line[..word_len].to_ascii_lowercase();
    STATEMENT_KEYWORDS.contains(&word.as_str())
        && line[word_len..].trim_start_matches([' ', '\t']).starts_with('(')
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Values with a canonical user-notation form.
pub trait ToNotation {
    fn to_notation(&self) -> String;
}

pub fn serialize<T: ToNotation + ?Sized>(rules: &T) -> String {
    rules.to_notation()
}

pub fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn word_or_quoted(text: &str) -> String {
    if is_identifier(text) {
        text.to_string()
    } else {
        quote(text)
    }
}

fn operand_text(text: &str) -> String {
    let reserved = CONDITION_KEYWORDS
        .iter()
        .any(|k| k.eq_ignore_ascii_case(text));
    if is_identifier(text) && !reserved {
        text.to_string()
    } else {
        quote(text)
    }
}

fn field_text(f: &FieldFilter) -> String {
    match f {
        FieldFilter::Any => WILDCARD.to_string(),
        FieldFilter::Exact(t) => word_or_quoted(t),
    }
}

fn value_filter_text(f: &FieldFilter) -> String {
    match f {
        FieldFilter::Any => WILDCARD.to_string(),
        FieldFilter::Exact(t) => quote(t),
    }
}

pub fn condition_to_notation(cond: &Condition) -> String {
    fn compound(c: &Condition) -> bool {
        matches!(c, Condition::And(_) | Condition::Or(_))
    }
    fn write(c: &Condition, out: &mut String) {
        match c {
            Condition::Null => out.push_str("null"),
            Condition::Compare { slot, op, operand } => {
                let op = match op {
                    CompareOp::Eq => "=",
                    CompareOp::Ne => "!=",
                };
                let operand = match operand {
                    Operand::Any => WILDCARD.to_string(),
                    Operand::Literal(t) => operand_text(t),
                };
                let _ = write!(out, "{} {op} {operand}", slot.name());
            }
            Condition::Not(inner) => {
                out.push_str("not ");
                if compound(inner) {
                    out.push('(');
                    write(inner, out);
                    out.push(')');
                } else {
                    write(inner, out);
                }
            }
            Condition::And(items) | Condition::Or(items) => {
                let sep = if matches!(c, Condition::And(_)) {
                    " and "
                } else {
                    " or "
                };
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(sep);
                    }
                    if compound(item) {
                        out.push('(');
                        write(item, out);
                        out.push(')');
                    } else {
                        write(item, out);
                    }
                }
            }
        }
    }
    let mut out = String::new();
    write(cond, &mut out);
    out
}

pub fn attribute_to_notation(attr: &Attribute) -> String {
    format!(
        "attribute({}, {} {})",
        attr.name,
        attr.value_type,
        quote(&attr.value)
    )
}

pub fn obligation_to_notation(ob: &Obligation) -> String {
    let mut head = ob.def.action_class.clone();
    for arg in &ob.def.args {
        head.push(' ');
        head.push_str(&arg.name);
    }
    let validity: Vec<&str> = ob.validity.iter().map(|a| a.name.as_str()).collect();
    format!(
        "obligation({head}, [{}], {})",
        validity.join(", "),
        condition_to_notation(&ob.condition)
    )
}

impl ToNotation for DataRuleSet {
    fn to_notation(&self) -> String {
        let mut out = String::new();
        let mut bound: BTreeMap<&str, &Attribute> = BTreeMap::new();
        for attr in self.attributes() {
            out.push_str(&attribute_to_notation(attr));
            out.push('\n');
            bound.insert(&attr.name, attr);
        }
        for ob in self.obligations() {
            for attr in ob.references() {
                if bound.get(attr.name.as_str()) != Some(&attr) {
                    out.push_str(&attribute_to_notation(attr));
                    out.push('\n');
                    bound.insert(&attr.name, attr);
                }
            }
            out.push_str(&obligation_to_notation(ob));
            out.push('\n');
        }
        out
    }
}

impl ToNotation for FlowRuleSet {
    fn to_notation(&self) -> String {
        let mut out = String::new();
        for p in &self.propagates {
            let outs: Vec<String> = p.out_ports.iter().map(|o| word_or_quoted(o)).collect();
            if outs.len() == 1 {
                let _ = writeln!(out, "pr({}, {})", word_or_quoted(&p.in_port), outs[0]);
            } else {
                let _ = writeln!(
                    out,
                    "pr({}, [{}])",
                    word_or_quoted(&p.in_port),
                    outs.join(", ")
                );
            }
        }
        for r in &self.refinements {
            let (in_port, out_port) = r.ports();
            let f = r.filter();
            let common = format!(
                "{}, {}, {}, {}, {}",
                field_text(in_port),
                field_text(out_port),
                field_text(&f.name),
                field_text(&f.value_type),
                value_filter_text(&f.value)
            );
            match r {
                Refinement::Delete { .. } => {
                    let _ = writeln!(out, "delete({common})");
                }
                Refinement::Edit {
                    new_type,
                    new_value,
                    ..
                } => {
                    let _ = writeln!(out, "edit({common}, {new_type}, {})", quote(new_value));
                }
            }
        }
        out
    }
}
