use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ruleflow::dot::export_dot;
use ruleflow::graph::{inject_virtual_process, load_graph, DataFlowGraph, PortKey, PortRef};
use ruleflow::notation::{parse_statements, resolve_rule_set, unwrap_continuations, Statement};
use ruleflow::reasoner::{reason, ContextOverrides};
use ruleflow::recognizer::{annotate, write_back, RuleDatabase};
use ruleflow::store::{ObligationStore, StoreFilter, StoredActivation};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INTERNAL: u8 = 3;
const EXIT_VIOLATION: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "ruleflow", version, about = "Propagate data rules through workflow graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Derive output rules and activated obligations for a graph.
    Reason {
        graph: PathBuf,
        /// Rule database to annotate the graph with.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Obligation store to append activations to.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        purpose: Option<String>,
        #[arg(long)]
        user: Option<String>,
        #[arg(long = "start-time")]
        start_time: Option<String>,
        /// Output ports (`process:port`) read by an injected publish process.
        #[arg(long = "inject-publish", num_args = 1..)]
        inject_publish: Vec<String>,
        /// `process:port=dataId` pairs, comma separated, stored in the rule database.
        #[arg(long = "write-back")]
        write_back: Option<String>,
        /// Result document path (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Check a rules file.
    Validate { rules: PathBuf },
    /// List recorded obligations.
    Obligations {
        store: PathBuf,
        #[arg(long)]
        dedup: bool,
        #[arg(long = "violations-only")]
        violations_only: bool,
    },
    /// Render a graph as DOT.
    ExportDot {
        graph: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct CliError {
    class: &'static str,
    detail: String,
    code: u8,
}

impl CliError {
    fn usage(detail: impl Display) -> Self {
        CliError {
            class: "Usage",
            detail: detail.to_string(),
            code: EXIT_USAGE,
        }
    }

    fn input(class: &'static str, detail: impl Display) -> Self {
        CliError {
            class,
            detail: detail.to_string(),
            code: EXIT_INPUT,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input("Io", format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::input("Io", format!("{}: {e}", path.display())))
}

fn load_graph_file(path: &Path) -> Result<DataFlowGraph, CliError> {
    load_graph(&read(path)?).map_err(|e| CliError::input("Graph", format!("{}: {e}", path.display())))
}

fn parse_write_back(spec: &str) -> Result<BTreeMap<PortKey, String>, CliError> {
    let mut map = BTreeMap::new();
    for pair in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (port, id) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--write-back entry `{pair}` is not port=id")))?;
        let key = PortKey::parse(port.trim())
            .ok_or_else(|| CliError::usage(format!("`{port}` is not process:port")))?;
        map.insert(key, id.trim().to_string());
    }
    Ok(map)
}

#[allow(clippy::too_many_arguments)]
fn run_reason(
    graph_path: &Path,
    rules: Option<&Path>,
    store: Option<&Path>,
    overrides: ContextOverrides,
    inject_publish: &[String],
    write_back_spec: Option<&str>,
    out: Option<&Path>,
    dot: Option<&Path>,
) -> Result<u8, CliError> {
    let data_ids = write_back_spec.map(parse_write_back).transpose()?;
    if data_ids.is_some() && rules.is_none() {
        return Err(CliError::usage("--write-back needs --rules"));
    }
    let sources = inject_publish
        .iter()
        .map(|p| {
            PortKey::parse(p)
                .map(|k| PortRef::output(k.process, k.port))
                .ok_or_else(|| CliError::usage(format!("`{p}` is not process:port")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut graph = load_graph_file(graph_path)?;
    let db = match rules {
        Some(path) => {
            let db = RuleDatabase::load(path)
                .map_err(|e| CliError::input("RuleDatabase", format!("{}: {e}", path.display())))?;
            graph = annotate(&graph, &db).map_err(|e| CliError::input("RuleDatabase", e))?;
            Some(db)
        }
        None => None,
    };
    if !sources.is_empty() {
        graph = inject_virtual_process(&graph, "publish", &sources)
            .map_err(|e| CliError::input("Graph", e))?;
    }

    let result = reason(&graph, &overrides);
    for lint in &result.lints {
        eprintln!("warning: {lint}");
    }

    if let Some(path) = store {
        let id = graph_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let id = id.strip_suffix(".graph").unwrap_or(&id).to_string();
        ObligationStore::open(path)
            .record(&id, &result.activations)
            .map_err(|e| CliError::input("Store", e))?;
    }
    if let (Some(ids), Some(db), Some(path)) = (data_ids, db, rules) {
        let next = write_back(&result, &ids, &db).map_err(|e| CliError::input("WriteBack", e))?;
        next.save(path)
            .map_err(|e| CliError::input("RuleDatabase", format!("{}: {e}", path.display())))?;
    }

    let json = result.to_json();
    match out {
        Some(path) => write(path, &json)?,
        None => print!("{json}"),
    }
    if let Some(path) = dot {
        write(path, &export_dot(&graph, Some(&result)))?;
    }
    Ok(if result.has_violations() { EXIT_VIOLATION } else { 0 })
}

fn run_validate(path: &Path) -> Result<u8, CliError> {
    let text = unwrap_continuations(&read(path)?);
    let statements = parse_statements(&text).map_err(|e| CliError::input("Notation", format!("{}:{e}", path.display())))?;
    let data: Vec<_> = statements
        .iter()
        .filter_map(|s| match s {
            Statement::Data(d) => Some(d.clone()),
            _ => None,
        })
        .collect();
    resolve_rule_set(&data).map_err(|e| CliError::input("Notation", format!("{}: {e}", path.display())))?;
    println!("{} statements", statements.len());
    Ok(0)
}

fn format_record(r: &StoredActivation) -> [String; 6] {
    let args: Vec<String> = r
        .args
        .iter()
        .map(|a| format!("{} {} {:?}", a.name, a.value_type, a.value))
        .collect();
    [
        r.recorded_at.clone(),
        r.graph.clone(),
        r.process.clone(),
        format!("{}({})", r.action, args.join(", ")),
        r.stage.clone().unwrap_or_else(|| "-".into()),
        if r.violation { "yes" } else { "no" }.into(),
    ]
}

fn run_obligations(path: &Path, dedup: bool, violations_only: bool) -> Result<u8, CliError> {
    let filter = StoreFilter {
        dedup,
        violations_only,
        ..Default::default()
    };
    let records = ObligationStore::open(path)
        .list(&filter)
        .map_err(|e| CliError::input("Store", e))?;
    let header = ["RECORDED", "GRAPH", "PROCESS", "OBLIGATION", "STAGE", "VIOLATION"].map(String::from);
    let rows: Vec<[String; 6]> = std::iter::once(header)
        .chain(records.iter().map(format_record))
        .collect();
    let mut widths = [0usize; 6];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        println!("{}", cells.join("  ").trim_end());
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Reason {
            graph,
            rules,
            store,
            purpose,
            user,
            start_time,
            inject_publish,
            write_back,
            out,
            dot,
        } => run_reason(
            &graph,
            rules.as_deref(),
            store.as_deref(),
            ContextOverrides {
                purpose,
                user,
                start_time,
            },
            &inject_publish,
            write_back.as_deref(),
            out.as_deref(),
            dot.as_deref(),
        ),
        Command::Validate { rules } => run_validate(&rules),
        Command::Obligations {
            store,
            dedup,
            violations_only,
        } => run_obligations(&store, dedup, violations_only),
        Command::ExportDot { graph, out } => {
            let dot = export_dot(&load_graph_file(&graph)?, None);
            match out {
                Some(path) => write(&path, &dot)?,
                None => print!("{dot}"),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let detail = first.lines().next().unwrap_or_default();
            let detail = detail.strip_prefix("error: ").unwrap_or(detail);
            eprintln!("error: Usage: {detail}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(e)) => {
            eprintln!("error: {}: {}", e.class, e.detail);
            ExitCode::from(e.code)
        }
        Err(_) => {
            eprintln!("error: Internal: unexpected failure");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
