//! Graphviz rendering of graphs and reasoning results.

use std::fmt::Write;

use crate::graph::{DataFlowGraph, PortKey};
use crate::notation::serialize;
use crate::reasoner::ReasoningResult;

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out
}

/// Left-justified multi-line label.
fn lines_label<'a>(lines: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for line in lines {
        out.push_str(&escape(line));
        out.push_str("\\l");
    }
    out
}

fn port_node(key: &PortKey) -> String {
    format!("\"{}\"", escape(&key.to_string()))
}

/// Renders `graph` as DOT text, annotating terminal outputs and activations
/// when a result is given.
pub fn export_dot(graph: &DataFlowGraph, result: Option<&ReasoningResult>) -> String {
    let mut out = String::from("digraph G {\n");
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [fontname=\"Helvetica\", fontsize=10];\n");
    out.push_str("  edge [fontname=\"Helvetica\", fontsize=9];\n");

    for p in graph.processes() {
        let style = if p.virtual_process { ", style=dashed" } else { "" };
        let _ = writeln!(
            out,
            "  \"{}\" [shape=box, label=\"{}\\n{}\"{}];",
            escape(&p.id),
            escape(&p.action_type),
            escape(&p.id),
            style
        );
        for port in &p.input_ports {
            let key = PortKey::new(&p.id, port);
            let shape = if p.virtual_inputs.contains(port) {
                "shape=egg, style=dashed"
            } else {
                "shape=ellipse"
            };
            let _ = writeln!(
                out,
                "  {} [{}, label=\"{}\"];",
                port_node(&key),
                shape,
                escape(port)
            );
            let _ = writeln!(out, "  {} -> \"{}\";", port_node(&key), escape(&p.id));
        }
        for port in &p.output_ports {
            let key = PortKey::new(&p.id, port);
            let _ = writeln!(
                out,
                "  {} [shape=ellipse, label=\"{}\"];",
                port_node(&key),
                escape(port)
            );
            let _ = writeln!(out, "  \"{}\" -> {};", escape(&p.id), port_node(&key));
        }
    }
    for c in graph.connections() {
        let _ = writeln!(out, "  {} -> {};", port_node(&c.from), port_node(&c.to));
    }

    if let Some(result) = result {
        for (key, rules) in &result.output_rules {
            let text = serialize(rules);
            let label = if text.is_empty() {
                lines_label(["(no rules)"])
            } else {
                lines_label(text.lines())
            };
            let note = format!("\"{}#rules\"", escape(&key.to_string()));
            let _ = writeln!(out, "  {note} [shape=note, label=\"{label}\"];");
            let _ = writeln!(
                out,
                "  {} -> {note} [style=dotted, arrowhead=none];",
                port_node(key)
            );
        }
        let mut by_process: Vec<(&str, Vec<String>, bool)> = Vec::new();
        for a in &result.activations {
            let line = format!(
                "{}{}",
                if a.violation { "VIOLATION " } else { "" },
                a.summary()
            );
            match by_process.iter_mut().find(|(p, _, _)| *p == a.triggering_process) {
                Some((_, lines, violation)) => {
                    lines.push(line);
                    *violation |= a.violation;
                }
                None => by_process.push((&a.triggering_process, vec![line], a.violation)),
            }
        }
        by_process.sort_by(|a, b| a.0.cmp(b.0));
        for (process, lines, violation) in by_process {
            let note = format!("\"{}#activations\"", escape(process));
            let color = if violation { "red" } else { "darkgreen" };
            let label = lines_label(lines.iter().map(String::as_str));
            let _ = writeln!(
                out,
                "  {note} [shape=note, color={color}, label=\"{label}\"];"
            );
            if graph.process(process).is_some() {
                let _ = writeln!(
                    out,
                    "  {note} -> \"{}\" [style=dotted, arrowhead=none];",
                    escape(process)
                );
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load_graph;
    use crate::reasoner::{reason, ContextOverrides};

    const RUNNING: &str = r#"{
      "processes": [{"id": "p", "action": "preprocess", "inputs": ["input1"],
        "outputs": ["output1", "output2"],
        "flowRules": "pr(input1, [output1, output2])\ndelete(input1, output1, *, column, \"DoB\")\nedit(input1, output2, *, column, \"DoB\", column, \"YroB\")"}],
      "connections": [],
      "initialRules": [{"process": "p", "port": "input1",
        "rules": "attribute(pf, column \"DoB\")\nattribute(ru, url \"report.example.ac\")\nobligation(report ru, [pf], action = *)"}]
    }"#;

    #[test]
    fn empty_graph_is_preamble_only() {
        let dot = export_dot(&DataFlowGraph::default(), None);
        assert!(dot.starts_with("digraph G {\n"));
        assert!(dot.ends_with("}\n"));
        assert!(!dot.contains("->"));
    }

    #[test]
    fn running_example_annotations() {
        let g = load_graph(RUNNING).unwrap();
        let r = reason(&g, &ContextOverrides::default());
        let dot = export_dot(&g, Some(&r));
        assert_eq!(dot.matches("shape=box").count(), 1);
        assert_eq!(dot.matches("#rules\" [shape=note").count(), 2);
        assert!(dot.contains("column \\\"YroB\\\""));
        assert!(dot.contains("\"p#activations\""));
        assert_eq!(dot, export_dot(&g, Some(&r)));
    }

    #[test]
    fn escapes_quotes_and_backslashes() {
        assert_eq!(escape("a\"b\\c\nd"), "a\\\"b\\\\c\\nd");
    }
}
