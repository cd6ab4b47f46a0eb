use std::collections::BTreeSet;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deltapoe_core::calculus::{
    check, derivation_dot, derivation_json, extract_plan, solution_of, tangles, Derivation, NodeState, PlanError,
    Verdict,
};
use deltapoe_core::dsl::{load, parse_change, Workspace};
use deltapoe_core::impact::{bound_report, environment_dot, impact_dot, propagate, Edit, ImpactError};
use deltapoe_core::model::Model;
use deltapoe_core::workflow::{
    append_events, read_log, DriftOrigin, Event, ImplementationMode, Registry, ValidationTarget, WorkflowError,
};

mod config;

macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

use config::Config;

/// Exit codes: 0 success, 1 incomplete or failed check, 2 invalid input,
/// 3 usage error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok = 0,
    Fail = 1,
    Invalid = 2,
    Usage = 3,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

#[derive(Parser)]
#[command(name = "deltapoe", version, about = "Check change-engineering derivations, plans, impact and workflows")]
struct Cli {
    /// key=value settings (format, color)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output format (overrides the config file)
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Parse files and check every derivation in them
    Check { files: Vec<PathBuf> },
    /// Print the implementation plan of a solved derivation
    Plan {
        file: PathBuf,
        #[arg(long)]
        derivation: Option<String>,
    },
    /// Propagate a change through a model's environment
    Impact {
        model: PathBuf,
        /// A change atom (`!D`, `+D`, `D ~> d[..](..)`) or `link D cause -> effect`
        #[arg(long)]
        edit: String,
        /// Comma-separated domains allowed to change
        #[arg(long, value_delimiter = ',')]
        permitted: Option<Vec<String>>,
        /// Comma-separated domains that absorb change
        #[arg(long, value_delimiter = ',')]
        buffers: Vec<String>,
    },
    /// Report missing justification fields and plan constraints
    Lint { files: Vec<PathBuf> },
    /// Manage a delegation workflow log
    Workflow(WorkflowArgs),
    /// Write a graph description of a derivation, model or impact report
    Export {
        file: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        derivation: Option<String>,
        /// Export the impact report of this edit instead
        #[arg(long)]
        edit: Option<String>,
        #[arg(long, value_delimiter = ',')]
        buffers: Vec<String>,
    },
    /// Report what named problems share
    Tangles {
        files: Vec<PathBuf>,
        /// Comma-separated problem names (default: all)
        #[arg(long, value_delimiter = ',')]
        problems: Option<Vec<String>>,
    },
}

#[derive(Args)]
struct WorkflowArgs {
    #[arg(long)]
    log: PathBuf,
    #[command(subcommand)]
    action: WorkflowAction,
}

#[derive(Subcommand)]
enum WorkflowAction {
    /// Create a workflow: OWNER delegates PROBLEM to DELEGATE
    Start {
        files: Vec<PathBuf>,
        #[arg(long)]
        problem: String,
        #[arg(long)]
        id: String,
        #[arg(long)]
        owner: String,
        #[arg(long)]
        delegate: String,
    },
    /// Print the folded state
    Status,
    /// Append one event to a workflow
    Advance {
        #[arg(long)]
        id: String,
        #[arg(value_enum)]
        event: EventKind,
        /// Validating stakeholder (record-validation)
        #[arg(long)]
        by: Option<String>,
        #[arg(long, conflicts_with = "rejected")]
        granted: bool,
        #[arg(long)]
        rejected: bool,
        /// Solution text (submit-solution)
        #[arg(long)]
        solution: Option<String>,
        /// Names the solution touches (submit-solution)
        #[arg(long, value_delimiter = ',')]
        references: Vec<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Sub-delegate from a workflow in CPS3 or CPS5
    Delegate {
        files: Vec<PathBuf>,
        #[arg(long)]
        id: String,
        #[arg(long)]
        child: String,
        #[arg(long)]
        to: String,
        /// Problem handed to the child (default: the parent's)
        #[arg(long)]
        problem: Option<String>,
    },
    /// Record a drift of the environment or needs
    Drift {
        #[arg(long, value_delimiter = ',', required = true)]
        touch: Vec<String>,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, value_enum, default_value = "environment")]
        origin: Origin,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EventKind {
    SubmitView,
    RequestValidation,
    RecordValidation,
    SubmitSolution,
    BeginImplementation,
    Complete,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Self_,
    Delegated,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Origin {
    Environment,
    Need,
}

struct Out {
    format: Format,
    color: bool,
}

impl Out {
    fn paint(&self, text: &str, code: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }

    fn verdict(&self, v: &Verdict) -> String {
        let code = match v {
            Verdict::Solved => "32",
            Verdict::Incomplete(_) => "33",
            Verdict::Invalid(_) => "31",
        };
        self.paint(v.label(), code)
    }

    fn json(&self, v: &serde_json::Value) {
        outln!("{}", serde_json::to_string_pretty(v).expect("json"));
    }
}

fn usage(msg: impl std::fmt::Display) -> Status {
    eprintln!("error: {msg}");
    Status::Usage
}

fn workspace(files: &[PathBuf]) -> Result<Workspace, Status> {
    if files.is_empty() {
        return Err(usage("no input files"));
    }
    if let Some(missing) = files.iter().find(|f| !f.exists()) {
        return Err(usage(format!("no such file '{}'", missing.display())));
    }
    load(files).map_err(|d| {
        eprintln!("{d}");
        Status::Invalid
    })
}

fn model_of(ws: &Workspace) -> Result<&Model, Status> {
    ws.model().ok_or_else(|| usage("no model loaded"))
}

fn pick_derivation(ws: &Workspace, name: Option<&str>) -> Result<Derivation, Status> {
    let model = model_of(ws)?;
    let script = match name {
        Some(n) => ws.derivation(n).ok_or_else(|| usage(format!("no derivation '{n}'")))?,
        None => match ws.derivations.as_slice() {
            [only] => only,
            [] => return Err(usage("no derivation in input")),
            _ => return Err(usage("several derivations; choose one with --derivation")),
        },
    };
    Ok(check(script, model))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Status::Usage } else { Status::Ok };
            let _ = e.print();
            return code.into();
        }
    };
    let config = match &cli.config {
        Some(p) => match Config::read(p) {
            Ok(c) => c,
            Err(e) => return usage(e).into(),
        },
        None => Config::default(),
    };
    let out = Out {
        format: cli.format.or(config.format).unwrap_or(Format::Text),
        color: config.color.unwrap_or(true) && std::env::var_os("NO_COLOR").is_none() && std::io::stdout().is_terminal(),
    };
    let status = match run(cli.command, &out) {
        Ok(s) | Err(s) => s,
    };
    status.into()
}

fn run(command: Command, out: &Out) -> Result<Status, Status> {
    match command {
        Command::Check { files } => cmd_check(&files, out),
        Command::Plan { file, derivation } => cmd_plan(&file, derivation.as_deref(), out),
        Command::Impact {
            model,
            edit,
            permitted,
            buffers,
        } => cmd_impact(&model, &edit, permitted, buffers, out),
        Command::Lint { files } => cmd_lint(&files, out),
        Command::Workflow(args) => cmd_workflow(args, out),
        Command::Export {
            file,
            graph,
            derivation,
            edit,
            buffers,
        } => cmd_export(&file, &graph, derivation.as_deref(), edit.as_deref(), buffers),
        Command::Tangles { files, problems } => cmd_tangles(&files, problems, out),
    }
}

fn cmd_check(files: &[PathBuf], out: &Out) -> Result<Status, Status> {
    let ws = workspace(files)?;
    let mut worst = Status::Ok;
    let mut reports = Vec::new();
    if ws.derivations.is_empty() && out.format == Format::Text {
        outln!("model ok");
        for p in &ws.problems {
            outln!("problem {} ok: {}", p.name, p.problem);
        }
    }
    for script in &ws.derivations {
        let d = check(script, model_of(&ws)?);
        let verdict = d.verdict();
        let status = match verdict {
            Verdict::Solved => Status::Ok,
            Verdict::Incomplete(_) => Status::Fail,
            Verdict::Invalid(_) => Status::Invalid,
        };
        if (status as u8) > (worst as u8) {
            worst = status;
        }
        for diag in &d.diagnostics {
            eprintln!("{}: {diag}", d.name);
        }
        if out.format == Format::Structured {
            reports.push(derivation_json(&d));
            continue;
        }
        outln!("derivation {}: {}", d.name, out.verdict(&verdict));
        for n in d.root.walk() {
            let what = match n.state {
                NodeState::Open => "open".to_string(),
                NodeState::Applied(r) => r.name().to_string(),
                NodeState::Discharged => "discharged".to_string(),
            };
            let mark = if d.pending().contains(&n.path) { " (pending)" } else { "" };
            outln!("  {} {what}{mark}: {}", n.path, d.resolved(n));
        }
        if let Ok(f) = solution_of(&d) {
            outln!("solution: {f}");
        }
    }
    if out.format == Format::Structured {
        out.json(&serde_json::Value::Array(reports));
    }
    Ok(worst)
}

fn cmd_plan(file: &Path, name: Option<&str>, out: &Out) -> Result<Status, Status> {
    let ws = workspace(&[file.to_path_buf()])?;
    let d = pick_derivation(&ws, name)?;
    match extract_plan(&d) {
        Ok(plan) => {
            match out.format {
                Format::Text => out!("{}", plan.render_text()),
                Format::Structured => out.json(&serde_json::to_value(&plan).expect("plan serializes")),
            }
            Ok(Status::Ok)
        }
        Err(e @ PlanError::UnsolvedTree(_)) => {
            eprintln!("{}: {e}", d.name);
            for diag in &d.diagnostics {
                eprintln!("{}: {diag}", d.name);
            }
            Ok(match d.verdict() {
                Verdict::Invalid(_) => Status::Invalid,
                _ => Status::Fail,
            })
        }
        Err(e) => {
            eprintln!("{}: {e}", d.name);
            Ok(Status::Invalid)
        }
    }
}

fn parse_edit(src: &str, model: &Model) -> Result<Edit, Status> {
    let src = src.trim();
    if let Some(rest) = src.strip_prefix("link ") {
        let (domain, link) = rest.trim().split_once(char::is_whitespace).ok_or_else(|| usage("expected 'link DOMAIN cause -> effect'"))?;
        let (cause, effect) = link.split_once("->").ok_or_else(|| usage("expected 'link DOMAIN cause -> effect'"))?;
        return Ok(Edit::NewLink {
            domain: domain.to_string(),
            cause: cause.trim().to_string(),
            effect: effect.trim().to_string(),
        });
    }
    parse_change(src, model).map(Edit::Change).map_err(|d| {
        eprintln!("--edit: {d}");
        Status::Invalid
    })
}

fn impact_error(e: ImpactError) -> Status {
    eprintln!("error: {e}");
    Status::Invalid
}

fn cmd_impact(model: &Path, edit: &str, permitted: Option<Vec<String>>, buffers: Vec<String>, out: &Out) -> Result<Status, Status> {
    let ws = workspace(&[model.to_path_buf()])?;
    let m = model_of(&ws)?;
    let edit = parse_edit(edit, m)?;
    let buffers: BTreeSet<String> = buffers.into_iter().collect();
    let report = propagate(&m.state, &edit, &buffers).map_err(impact_error)?;
    let bound = permitted.map(|p| {
        let permitted: BTreeSet<String> = p.into_iter().collect();
        bound_report(&report, &permitted)
    });
    match out.format {
        Format::Text => {
            out!("{}", report.render_text());
            if let Some(b) = &bound {
                out!("{}", b.render_text());
            }
        }
        Format::Structured => out.json(&serde_json::json!({ "impact": report, "bound": bound })),
    }
    Ok(match bound {
        Some(b) if !b.pass => Status::Fail,
        _ => Status::Ok,
    })
}

fn cmd_lint(files: &[PathBuf], out: &Out) -> Result<Status, Status> {
    let ws = workspace(files)?;
    let model = model_of(&ws)?;
    let mut status = Status::Ok;
    let mut found = Vec::new();
    for script in &ws.derivations {
        let d = check(script, model);
        for diag in d.lint() {
            status = Status::Fail;
            if out.format == Format::Text {
                outln!("{}: {diag}", d.name);
            }
            found.push(serde_json::json!({ "derivation": d.name, "diagnostic": diag }));
        }
    }
    match out.format {
        Format::Text if status == Status::Ok => outln!("lint ok"),
        Format::Structured => out.json(&serde_json::Value::Array(found)),
        _ => {}
    }
    Ok(status)
}

fn workflow_error(e: WorkflowError) -> Status {
    eprintln!("error: {e}");
    match e {
        WorkflowError::Io(_) => Status::Usage,
        WorkflowError::Corrupt { .. } => Status::Invalid,
        _ => Status::Fail,
    }
}

fn print_registry(reg: &Registry, out: &Out) {
    match out.format {
        Format::Text => out!("{}", reg.status_text()),
        Format::Structured => out.json(&reg.to_json()),
    }
}

fn cmd_workflow(args: WorkflowArgs, out: &Out) -> Result<Status, Status> {
    let log = args.log;
    let run = |f: &mut dyn FnMut(&mut Registry) -> Result<Event, WorkflowError>, id: &str| {
        append_events(&log, |reg| {
            let ev = f(reg)?;
            let rec = reg.apply(id, ev)?;
            Ok((vec![rec], ()))
        })
        .map(|(reg, ())| reg)
    };
    let reg = match args.action {
        WorkflowAction::Status => read_log(&log).map(|(_, reg)| reg).map_err(workflow_error)?,
        WorkflowAction::Start {
            files,
            problem,
            id,
            owner,
            delegate,
        } => {
            let ws = workspace(&files)?;
            let model = model_of(&ws)?;
            let p = ws.problem(&problem).ok_or_else(|| usage(format!("no problem '{problem}'")))?.problem.clone();
            append_events(&log, |reg| Ok((vec![reg.start(model, &id, &owner, &delegate, p)?], ())))
                .map(|(r, ())| r)
                .map_err(workflow_error)?
        }
        WorkflowAction::Delegate {
            files,
            id,
            child,
            to,
            problem,
        } => {
            let ws = workspace(&files)?;
            let model = model_of(&ws)?;
            let sub = match problem {
                Some(name) => Some(ws.problem(&name).ok_or_else(|| usage(format!("no problem '{name}'")))?.problem.clone()),
                None => None,
            };
            append_events(&log, |reg| Ok((vec![reg.delegate(model, &id, &child, &to, sub)?], ())))
                .map(|(r, ())| r)
                .map_err(workflow_error)?
        }
        WorkflowAction::Drift {
            touch,
            description,
            origin,
        } => {
            let origin = match origin {
                Origin::Environment => DriftOrigin::Environment,
                Origin::Need => DriftOrigin::Need,
            };
            let (reg, report) = append_events(&log, |reg| {
                let (rec, report) = reg.drift(touch.into_iter().collect(), &description, origin)?;
                Ok((vec![rec], report))
            })
            .map_err(workflow_error)?;
            if out.format == Format::Text {
                for s in &report.stale {
                    outln!("stale: {} {} (granted @{})", s.record, s.target, s.granted_at);
                }
                for (wf, from, to) in &report.regressions {
                    outln!("regressed: {wf} {from} -> {to}");
                }
                if report.is_empty() {
                    outln!("drift touched nothing under validation");
                }
            }
            reg
        }
        WorkflowAction::Advance {
            id,
            event,
            by,
            granted,
            rejected,
            solution,
            references,
            mode,
        } => {
            let mut build = |reg: &mut Registry| -> Result<Event, WorkflowError> {
                Ok(match event {
                    EventKind::SubmitView => Event::SubmitView { view: None },
                    EventKind::RequestValidation => {
                        let state = reg.get(&id)?.state;
                        let target = if state == deltapoe_core::workflow::CpsState::Cps2 {
                            ValidationTarget::ProblemView
                        } else {
                            ValidationTarget::SolutionPlan
                        };
                        Event::RequestValidation { target }
                    }
                    EventKind::RecordValidation => Event::RecordValidation {
                        stakeholder: by.clone().unwrap_or_else(|| reg.get(&id).map(|w| w.owner.clone()).unwrap_or_default()),
                        granted: granted || !rejected,
                    },
                    EventKind::SubmitSolution => Event::SubmitSolution {
                        solution: solution.clone().unwrap_or_default(),
                        references: references.iter().cloned().collect(),
                    },
                    EventKind::BeginImplementation => Event::BeginImplementation {
                        mode: match mode {
                            Some(Mode::Delegated) => ImplementationMode::Delegated,
                            _ => ImplementationMode::SelfImplement,
                        },
                    },
                    EventKind::Complete => Event::Complete,
                })
            };
            if matches!(event, EventKind::RecordValidation) && granted == rejected {
                return Err(usage("record-validation needs --granted or --rejected"));
            }
            run(&mut build, &id).map_err(workflow_error)?
        }
    };
    print_registry(&reg, out);
    Ok(Status::Ok)
}

fn write_file(path: &Path, text: &str) -> Result<(), Status> {
    std::fs::write(path, text).map_err(|e| usage(format!("cannot write '{}': {e}", path.display())))
}

fn cmd_export(file: &Path, graph: &Path, name: Option<&str>, edit: Option<&str>, buffers: Vec<String>) -> Result<Status, Status> {
    let ws = workspace(&[file.to_path_buf()])?;
    let model = model_of(&ws)?;
    let text = if let Some(src) = edit {
        let edit = parse_edit(src, model)?;
        let buffers: BTreeSet<String> = buffers.into_iter().collect();
        let report = propagate(&model.state, &edit, &buffers).map_err(impact_error)?;
        impact_dot(&model.state, &report)
    } else if ws.derivations.is_empty() {
        environment_dot(&model.state)
    } else {
        derivation_dot(&pick_derivation(&ws, name)?)
    };
    write_file(graph, &text)?;
    Ok(Status::Ok)
}

fn cmd_tangles(files: &[PathBuf], names: Option<Vec<String>>, out: &Out) -> Result<Status, Status> {
    let ws = workspace(files)?;
    let chosen: Vec<(String, _)> = match names {
        Some(names) => names
            .iter()
            .map(|n| {
                ws.problem(n)
                    .map(|p| (n.clone(), p.problem.clone()))
                    .ok_or_else(|| usage(format!("no problem '{n}'")))
            })
            .collect::<Result<_, _>>()?,
        None => ws.problems.iter().map(|p| (p.name.clone(), p.problem.clone())).collect(),
    };
    let report = tangles(&chosen);
    match out.format {
        Format::Text => out!("{}", report.render_text()),
        Format::Structured => out.json(&serde_json::to_value(&report).expect("report serializes")),
    }
    Ok(Status::Ok)
}
