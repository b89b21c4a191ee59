//! `locc-net`: entanglement costs of spreading and concentrating quantum
//! information over tree networks.
//!
//! Every command builds one structured document; `--format human` renders it.
//! Exit codes: 0 ok, 2 bad input, 3 merge synthesis failed, 4 verification
//! failed.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use locc_net::code::CodeDocument;
use locc_net::harness::{
    concentrate_trace, ki_report, resolve_labeling, spread_trace, verify_trace, LabelingChoice, RunConfig,
};
use locc_net::io::{self, TreeDocument};
use locc_net::ki::KiRoles;
use locc_net::network::{Labeling, TreeNetwork};
use locc_net::par::ExecPolicy;
use locc_net::protocols::{
    compare_costs, run_concentrating, run_spreading, spreading_cost, spreading_lower_bound_check, state_before,
    BranchPolicy, ConcentrateMode,
};
use locc_net::relative::relative_state_check;
use locc_net::tensor::PureState;
use locc_net::trace::{ProtocolTrace, Tolerances};
use locc_net::code::IsometryCode;
use locc_net::Error;

const REPORT_FORMAT: &str = "locc-net-report/1";
/// Trace distance allowed in the relative-state check.
const RELATIVE_TOL: f64 = 1e-8;

#[derive(Parser, Debug)]
#[command(name = "locc-net", version, about = "Entanglement costs of spreading and concentrating quantum information over trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Code document: a JSON file or `builtin:NAME`.
    #[arg(long, global = true)]
    code: Option<String>,
    /// Tree document: a JSON file, `line:N` or `star:N` (defaults to the builtin's own tree).
    #[arg(long, global = true)]
    tree: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = LabelingArg::Auto)]
    labeling: LabelingArg,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Tight)]
    mode: ModeArg,
    /// `all`, `sample:N` or `fixed:o1,o2,...`.
    #[arg(long, global = true, default_value = "all")]
    branches: String,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long = "tol-rank", global = true, default_value_t = 1e-8)]
    tol_rank: f64,
    #[arg(long = "tol-verify", global = true, default_value_t = 1e-9)]
    tol_verify: f64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
    /// Write the recorded branch as a trace document.
    #[arg(long = "trace-out", global = true)]
    trace_out: Option<PathBuf>,
    /// Random inputs for the relative-state check of `run-*`.
    #[arg(long = "rho-samples", global = true, default_value_t = 20)]
    rho_samples: usize,
    /// Evaluate branches on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-edge spreading cost (Schmidt ranks of the subtree marginals).
    CostSpread,
    /// Per-edge concentrating cost over the explored branches.
    CostConcentrate,
    /// Execute spreading, verify it and optionally write a trace.
    RunSpread,
    /// Execute concentrating, verify it and optionally write a trace.
    RunConcentrate,
    /// Both costs side by side.
    Compare,
    /// Koashi-Imoto decomposition of a state file or of a concentrating step.
    Ki(KiArgs),
    /// Replay a stored trace.
    VerifyTrace {
        path: PathBuf,
    },
}

#[derive(Args, Debug)]
struct KiArgs {
    /// State document with `registers`, `amplitudes`, `reference`, `a`, `b`.
    #[arg(long)]
    state: Option<String>,
    /// Decompose the state just before this party merges.
    #[arg(long)]
    party: Option<String>,
    /// Outcomes of the earlier measurements, comma separated.
    #[arg(long, default_value = "")]
    outcomes: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelingArg {
    Given,
    Auto,
    Search,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Tight,
    Fallback,
    TightWithFallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Structured,
}

/// A finished command: its document and exit code.
struct Outcome {
    result: Value,
    code: u8,
}

fn ok(result: Value, passed: bool) -> Outcome {
    Outcome { result, code: if passed { 0 } else { 4 } }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::SynthesisFailed(_) => 3,
        Error::NumericalDegeneracy(_)
        | Error::ZeroProbabilityBranch(_)
        | Error::InsufficientResource { .. }
        | Error::NonIsometry(_) => 4,
        _ => 2,
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<usize>, Error> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            x.trim().parse::<usize>().map_err(|_| Error::Schema {
                field: what.into(),
                message: format!("`{x}` is not an outcome index"),
            })
        })
        .collect()
}

fn parse_branches(s: &str, seed: u64) -> Result<BranchPolicy, Error> {
    let bad = || Error::Schema { field: "branches".into(), message: format!("expected all, sample:N or fixed:LIST, got `{s}`") };
    if s == "all" {
        return Ok(BranchPolicy::Exhaustive);
    }
    if let Some(n) = s.strip_prefix("sample:") {
        return Ok(BranchPolicy::Sample { n: n.parse().map_err(|_| bad())?, seed });
    }
    if let Some(list) = s.strip_prefix("fixed:") {
        return Ok(BranchPolicy::Fixed(parse_list(list, "branches")?));
    }
    Err(bad())
}

fn config(c: &Common) -> Result<RunConfig, Error> {
    let cfg = RunConfig {
        tolerances: Tolerances { rank: c.tol_rank, verify: c.tol_verify },
        branches: parse_branches(&c.branches, c.seed)?,
        mode: match c.mode {
            ModeArg::Tight => ConcentrateMode::Tight,
            ModeArg::Fallback => ConcentrateMode::Fallback,
            ModeArg::TightWithFallback => ConcentrateMode::TightWithFallback,
        },
        seed: c.seed,
        labeling: match c.labeling {
            LabelingArg::Given => LabelingChoice::Given,
            LabelingArg::Auto => LabelingChoice::Auto,
            LabelingArg::Search => LabelingChoice::Search,
        },
        rho_samples: c.rho_samples,
        policy: if c.sequential { ExecPolicy::Sequential } else { ExecPolicy::Parallel },
    };
    cfg.validate()?;
    Ok(cfg)
}

struct Inputs {
    code_doc: CodeDocument,
    tree_doc: TreeDocument,
    code: IsometryCode,
    tree: TreeNetwork,
    labeling: Option<Labeling>,
}

fn inputs(c: &Common) -> Result<Inputs, Error> {
    let spec = c.code.as_deref().ok_or_else(|| Error::Schema { field: "code".into(), message: "`--code` is required".into() })?;
    let code_doc = io::load_code_document(spec)?;
    let tree_doc = match &c.tree {
        Some(t) => io::load_tree_document(t)?,
        None => io::default_tree(&code_doc).ok_or_else(|| Error::Schema {
            field: "tree".into(),
            message: "`--tree` is required for this code".into(),
        })?,
    };
    let (code, tree, labeling) = io::parse_inputs(&code_doc, &tree_doc)?;
    Ok(Inputs { code_doc, tree_doc, code, tree, labeling })
}

fn write_trace(path: &Option<PathBuf>, trace: &ProtocolTrace) -> Result<Value, Error> {
    let Some(p) = path else { return Ok(Value::Null) };
    let text = serde_json::to_string_pretty(trace).expect("traces serialize");
    std::fs::write(p, text + "\n").map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
    Ok(json!(p.display().to_string()))
}

fn value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("documents serialize")
}

fn cost_spread(c: &Common, cfg: &RunConfig) -> Result<Outcome, Error> {
    let inp = inputs(c)?;
    let report = spreading_cost(&inp.code, &inp.tree, cfg.tolerances.rank)?;
    Ok(ok(json!({ "report": value(&report) }), true))
}

fn cost_concentrate(c: &Common, cfg: &RunConfig) -> Result<Outcome, Error> {
    let inp = inputs(c)?;
    let labeling = resolve_labeling(&inp.code, &inp.tree, inp.labeling.clone(), cfg)?;
    let run = run_concentrating(&inp.code, &inp.tree, &labeling, &cfg.concentrate_options())?;
    let chain = run.leaves.iter().map(|l| l.chain_deviation).fold(0.0, f64::max);
    Ok(ok(
        json!({
            "report": value(&run.report),
            "levels": value(&run.levels),
            "branches": run.leaves.len(),
            "probability_sum": run.probability_sum,
            "max_deviation": run.max_deviation,
            "max_chain_deviation": chain,
            "verified": run.passed,
        }),
        run.passed,
    ))
}

fn run_spread(c: &Common, cfg: &RunConfig) -> Result<Outcome, Error> {
    let inp = inputs(c)?;
    let labeling = resolve_labeling(&inp.code, &inp.tree, inp.labeling.clone(), cfg)?;
    let run = run_spreading(&inp.code, &inp.tree, &labeling, &cfg.spread_options())?;
    let bound = spreading_lower_bound_check(&inp.code, &inp.tree, &run.report, cfg.tolerances.rank)?;
    let relative = if cfg.branches.is_exhaustive() {
        Some(relative_state_check(&inp.code, Some(&run.plan), None, cfg.rho_samples, cfg.seed, cfg.policy)?)
    } else {
        None
    };
    let trace = spread_trace(&inp.code_doc, &inp.tree_doc, &run, cfg);
    let written = write_trace(&c.trace_out, &trace)?;
    let passed = run.verification.passed
        && run.deviation <= cfg.tolerances.verify
        && bound.feasible
        && relative.as_ref().is_none_or(|r| r.passed(RELATIVE_TOL));
    Ok(ok(
        json!({
            "labeling": labeling.names(&inp.tree),
            "report": value(&run.report),
            "lower_bound": value(&bound),
            "verification": value(&run.verification),
            "relative_state": value(&relative),
            "recorded_branch": {
                "outcomes": run.outcomes,
                "probability": run.probability,
                "deviation": run.deviation,
                "events": trace.events.len(),
                "final_hash": trace.final_hash,
            },
            "trace_out": written,
            "passed": passed,
        }),
        passed,
    ))
}

fn run_concentrate(c: &Common, cfg: &RunConfig) -> Result<Outcome, Error> {
    let inp = inputs(c)?;
    let labeling = resolve_labeling(&inp.code, &inp.tree, inp.labeling.clone(), cfg)?;
    let run = run_concentrating(&inp.code, &inp.tree, &labeling, &cfg.concentrate_options())?;
    let relative = if cfg.branches.is_exhaustive() {
        Some(relative_state_check(&inp.code, None, Some(&run), cfg.rho_samples, cfg.seed, cfg.policy)?)
    } else {
        None
    };
    let leaf = run.leaves.first().ok_or(Error::ZeroProbabilityBranch(0.0))?;
    let trace = concentrate_trace(&inp.code_doc, &inp.tree_doc, &run.report, leaf, cfg);
    let written = write_trace(&c.trace_out, &trace)?;
    let measurements: Vec<Value> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            locc_net::trace::Event::Measurement { party, outcome, probability, .. } => {
                Some(json!({ "party": party, "outcome": outcome, "probability": probability }))
            }
            _ => None,
        })
        .collect();
    let passed = run.passed && relative.as_ref().is_none_or(|r| r.passed(RELATIVE_TOL));
    Ok(ok(
        json!({
            "labeling": labeling.names(&inp.tree),
            "report": value(&run.report),
            "levels": value(&run.levels),
            "branches": run.leaves.len(),
            "probability_sum": run.probability_sum,
            "max_deviation": run.max_deviation,
            "relative_state": value(&relative),
            "recorded_branch": {
                "outcomes": leaf.outcomes,
                "probability": leaf.probability,
                "deviation": leaf.deviation,
                "chain_deviation": leaf.chain_deviation,
                "measurements": measurements,
                "deferred_corrections": leaf.deferred.steps.len(),
                "events": trace.events.len(),
                "final_hash": trace.final_hash,
            },
            "trace_out": written,
            "passed": passed,
        }),
        passed,
    ))
}

fn compare(c: &Common, cfg: &RunConfig) -> Result<Outcome, Error> {
    let inp = inputs(c)?;
    let labeling = resolve_labeling(&inp.code, &inp.tree, inp.labeling.clone(), cfg)?;
    let cmp = compare_costs(&inp.code, &inp.tree, &labeling, &cfg.concentrate_options())?;
    let passed = cmp.violations.is_empty();
    Ok(ok(json!({ "comparison": value(&cmp), "passed": passed }), passed))
}

fn ki(c: &Common, cfg: &RunConfig, args: &KiArgs) -> Result<Outcome, Error> {
    let (psi, roles, source): (PureState, KiRoles, Value) = match (&args.state, &args.party) {
        (Some(path), _) => {
            let (psi, roles) = io::parse_state(&io::load_state_document(path)?)?;
            (psi, roles, json!({ "state": path }))
        }
        (None, Some(party)) => {
            let inp = inputs(c)?;
            let labeling = resolve_labeling(&inp.code, &inp.tree, inp.labeling.clone(), cfg)?;
            let prefix = parse_list(&args.outcomes, "outcomes")?;
            let (psi, roles) =
                state_before(&inp.code, &inp.tree, &labeling, &cfg.concentrate_options(), party, &prefix)?;
            (psi, roles, json!({ "party": party, "outcomes": prefix, "labeling": labeling.names(&inp.tree) }))
        }
        (None, None) => {
            return Err(Error::Schema { field: "ki".into(), message: "give `--state FILE` or `--party NAME`".into() })
        }
    };
    let report = ki_report(&psi, &roles, cfg)?;
    Ok(ok(json!({ "source": source, "ki": value(&report) }), true))
}

fn verify(path: &std::path::Path) -> Result<Outcome, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let trace: ProtocolTrace = io::parse_json(&text, &path.display().to_string())?;
    let v = verify_trace(&trace)?;
    Ok(ok(
        json!({
            "task": trace.task,
            "code": trace.report.code,
            "labeling": trace.labeling,
            "outcomes": trace.outcomes,
            "recorded_hash": trace.final_hash,
            "verdict": value(&v),
        }),
        v.passed,
    ))
}

fn arg_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

fn config_echo(cli: &Cli) -> Value {
    let c = &cli.common;
    let mut echo = json!({
        "code": c.code,
        "tree": c.tree,
        "labeling": arg_name(c.labeling),
        "mode": arg_name(c.mode),
        "branches": c.branches,
        "seed": c.seed,
        "tolerances": { "rank": c.tol_rank, "verify": c.tol_verify },
    });
    match &cli.command {
        Command::RunSpread | Command::RunConcentrate => {
            echo["rho_samples"] = json!(c.rho_samples);
        }
        Command::Ki(a) => {
            echo["state"] = json!(a.state);
            echo["party"] = json!(a.party);
            echo["outcomes"] = json!(a.outcomes);
        }
        Command::VerifyTrace { path } => {
            echo = json!({ "trace": path.display().to_string() });
        }
        _ => {}
    }
    echo
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::CostSpread => "cost-spread",
        Command::CostConcentrate => "cost-concentrate",
        Command::RunSpread => "run-spread",
        Command::RunConcentrate => "run-concentrate",
        Command::Compare => "compare",
        Command::Ki(_) => "ki",
        Command::VerifyTrace { .. } => "verify-trace",
    }
}

fn execute(cli: &Cli) -> Result<Outcome, Error> {
    let cfg = config(&cli.common)?;
    let c = &cli.common;
    match &cli.command {
        Command::CostSpread => cost_spread(c, &cfg),
        Command::CostConcentrate => cost_concentrate(c, &cfg),
        Command::RunSpread => run_spread(c, &cfg),
        Command::RunConcentrate => run_concentrate(c, &cfg),
        Command::Compare => compare(c, &cfg),
        Command::Ki(a) => ki(c, &cfg, a),
        Command::VerifyTrace { path } => verify(path),
    }
}

mod human;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    let (doc, code) = match execute(&cli) {
        Ok(o) => {
            let doc = json!({
                "format": REPORT_FORMAT,
                "command": name,
                "config": config_echo(&cli),
                "result": o.result,
                "exit_code": o.code,
            });
            (doc, o.code)
        }
        Err(e) => {
            let code = exit_code(&e);
            let doc = json!({
                "format": REPORT_FORMAT,
                "command": name,
                "config": config_echo(&cli),
                "error": { "kind": e.kind(), "message": e.to_string() },
                "exit_code": code,
            });
            (doc, code)
        }
    };
    // A closed pipe is not worth a panic; the exit code still tells the story.
    let _ = match cli.common.format {
        Format::Structured => {
            writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&doc).expect("documents serialize"))
        }
        Format::Human if doc.get("error").is_some() => writeln!(std::io::stderr(), "{}", human::render(&doc)),
        Format::Human => write!(std::io::stdout(), "{}", human::render(&doc)),
    };
    ExitCode::from(code)
}
