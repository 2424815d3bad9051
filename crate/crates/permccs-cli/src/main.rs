use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use permccs::confined::{erase, evaluate_safe, ConfinedError, SafeEval, SysConfig};
use permccs::logic::{satisfies, LogicError, Satisfaction};
use permccs::oracles::{run_suite, GenSpec, OracleConfig, Suite};
use permccs::parser::{
    narrative_json, parse_env, parse_formula, parse_program, parse_proof_file, parse_system_file, print_canon_process,
    print_canon_system, print_perms, print_sequent, process_trace_json, ParseError,
};
use permccs::process::{canon, evaluate, trace_first, value_normal, EvaluateError, ProcessError};
use permccs::proof::{check_proof, CheckConfig};

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_NO_NARRATIVE: u8 = 4;
const EXIT_NONDETERMINISTIC: u8 = 10;
const EXIT_REJECTED: u8 = 11;

#[derive(Parser)]
#[command(name = "permccs", version)]
#[command(about = "Permission-confined value-passing CCS: evaluate, certify, satisfy, prove")]
struct Cli {
    /// State budget for reduction searches
    #[arg(long, global = true, env = "PERMCCS_BUDGET", default_value_t = permccs::process::DEFAULT_BUDGET)]
    budget: usize,

    /// Largest permission set a split may enumerate
    #[arg(long, global = true, default_value_t = permccs::confined::DEFAULT_SPLIT_CAP)]
    split_cap: usize,

    /// Per-variable domain bound for bounded entailment checks
    #[arg(long, global = true, default_value_t = 64)]
    bound: i64,

    /// Seed for randomized suites
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    /// Emit JSON instead of text
    #[arg(long, global = true)]
    json: bool,

    /// Include reduction traces
    #[arg(long, global = true)]
    trace: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a process file and print every stable result
    Run { file: PathBuf },
    /// Search for a safe evaluation (narrative) of a system file
    Certify { file: PathBuf },
    /// Check a system against a formula under a permission environment
    Satisfy { system: PathBuf, formula: PathBuf, env: PathBuf },
    /// Check a proof script
    Prove {
        file: PathBuf,
        /// Accept entailments established only by the bounded scan
        #[arg(long)]
        accept_bounded: bool,
    },
    /// Run a randomized metatheory suite (or `all`)
    Oracle {
        suite: String,
        /// Number of generated systems
        #[arg(long, default_value_t = 500)]
        systems: usize,
    },
}

/// A finished command: what to print and how to exit.
struct Outcome {
    code: u8,
    text: String,
    json: Value,
}

impl Outcome {
    fn new(code: u8, text: String, json: Value) -> Outcome {
        Outcome { code, text, json }
    }
}

fn read(path: &Path) -> Result<String, Outcome> {
    fs::read_to_string(path).map_err(|e| {
        let msg = format!("{}: {e}", path.display());
        Outcome::new(EXIT_PARSE, msg.clone(), json!({ "error": "io", "message": msg }))
    })
}

fn parse_failure(path: &Path, e: ParseError) -> Outcome {
    let msg = format!("{}: {e}", path.display());
    Outcome::new(EXIT_PARSE, msg.clone(), json!({ "error": "parse", "message": msg }))
}

fn budget_failure(what: String) -> Outcome {
    Outcome::new(EXIT_BUDGET, what.clone(), json!({ "error": "budget", "message": what }))
}

fn sys_config(cli: &Cli) -> SysConfig {
    SysConfig { budget: cli.budget, split_cap: cli.split_cap }
}

fn confined_failure(e: ConfinedError) -> Outcome {
    match e {
        ConfinedError::BudgetExhausted(_) | ConfinedError::CapExceeded { .. } => budget_failure(e.to_string()),
        other => Outcome::new(EXIT_FAIL, other.to_string(), json!({ "error": "semantics", "message": other.to_string() })),
    }
}

fn cmd_run(cli: &Cli, file: &Path) -> Result<Outcome, Outcome> {
    let (defs, p) = parse_program(&read(file)?).map_err(|e| parse_failure(file, e))?;
    let results = match evaluate(&p, &defs, cli.budget) {
        Ok(r) => r,
        Err(EvaluateError::BudgetExhausted { partial }) => {
            return Err(budget_failure(format!("budget of {} states exhausted after {} stable result(s)", cli.budget, partial.len())))
        }
        Err(EvaluateError::Process(e)) => return Err(process_failure(e)),
    };
    let shown: Vec<String> = results.iter().map(|r| print_canon_process(&value_normal(r))).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let code = if shown.len() > 1 { EXIT_NONDETERMINISTIC } else { EXIT_OK };
    let mut text = shown.join("\n");
    if code == EXIT_NONDETERMINISTIC {
        text.push_str(&format!("\nnondeterministic: {} distinct stable results", shown.len()));
    }
    let mut out = json!({ "command": "run", "results": shown, "deterministic": code == EXIT_OK });
    if cli.trace {
        let (steps, _) = trace_first(&p, &defs, cli.budget).map_err(process_failure)?;
        let tr = process_trace_json(&canon(&p), &steps);
        if !cli.json {
            text = format!("{}\n{text}", trace_text(&tr));
        }
        out["trace"] = tr;
    }
    Ok(Outcome::new(code, text, out))
}

fn process_failure(e: ProcessError) -> Outcome {
    Outcome::new(EXIT_FAIL, e.to_string(), json!({ "error": "semantics", "message": e.to_string() }))
}

fn trace_text(trace: &Value) -> String {
    trace
        .as_array()
        .into_iter()
        .flatten()
        .map(|e| format!("{:>4} {:<6} {} {}", e["step"], e["rule"].as_str().unwrap_or(""), e["redex-path"], e["system"].as_str().unwrap_or("")))
        .collect::<Vec<_>>()
        .join("\n")
}

fn cmd_certify(cli: &Cli, file: &Path) -> Result<Outcome, Outcome> {
    let (defs, s) = parse_system_file(&read(file)?).map_err(|e| parse_failure(file, e))?;
    match evaluate_safe(&s, &defs, sys_config(cli)).map_err(confined_failure)? {
        SafeEval::Found(n) => {
            let result = print_canon_process(&value_normal(&canon(&erase(&n.result.to_system()))));
            let trace = narrative_json(&n);
            let text = format!(
                "certified: {result}\nsafely stable: {}\nnarrative ({} steps):\n{}",
                print_canon_system(&n.result),
                n.trace.len(),
                trace_text(&trace)
            );
            Ok(Outcome::new(EXIT_OK, text, json!({ "command": "certify", "certified": result, "result": print_canon_system(&n.result), "trace": trace })))
        }
        SafeEval::NoNarrative { deepest_violation } => {
            let witness = deepest_violation.map(|(t, v)| {
                (print_canon_system(&t), print_perms(&[v.missing.clone()].into()), v.leaf)
            });
            let text = match &witness {
                Some((t, p, leaf)) => format!("no narrative: every allocation violates permissions\ndeepest violation: leaf {leaf} lacks {p} in {t}"),
                None => "no narrative: no safely stable system is reachable".to_string(),
            };
            let j = json!({
                "command": "certify",
                "certified": Value::Null,
                "violation": witness.map(|(t, p, leaf)| json!({ "system": t, "missing": p, "leaf": leaf })),
            });
            Ok(Outcome::new(EXIT_NO_NARRATIVE, text, j))
        }
    }
}

fn cmd_satisfy(cli: &Cli, sys: &Path, frm: &Path, env: &Path) -> Result<Outcome, Outcome> {
    let (defs, s) = parse_system_file(&read(sys)?).map_err(|e| parse_failure(sys, e))?;
    let f = parse_formula(&read(frm)?).map_err(|e| parse_failure(frm, e))?;
    let g = parse_env(&read(env)?).map_err(|e| parse_failure(env, e))?;
    let v = satisfies(&g, &s, &f, &defs, sys_config(cli)).map_err(|e| match e {
        LogicError::Confined(c) => confined_failure(c),
        other => Outcome::new(EXIT_FAIL, other.to_string(), json!({ "error": "logic", "message": other.to_string() })),
    })?;
    Ok(match v {
        Satisfaction::Sat(t) => {
            let w = print_canon_system(&t);
            Outcome::new(EXIT_OK, format!("sat\nwitness: {w}"), json!({ "command": "satisfy", "verdict": "sat", "witness": w }))
        }
        Satisfaction::Unsat(class) => {
            let c = format!("{class:?}");
            Outcome::new(EXIT_FAIL, format!("unsat ({c})"), json!({ "command": "satisfy", "verdict": "unsat", "class": c }))
        }
        Satisfaction::Unknown(why) => {
            Outcome::new(EXIT_BUDGET, format!("unknown: {why}"), json!({ "command": "satisfy", "verdict": "unknown", "reason": why }))
        }
    })
}

fn cmd_prove(cli: &Cli, file: &Path, accept_bounded: bool) -> Result<Outcome, Outcome> {
    let (defs, t) = parse_proof_file(&read(file)?).map_err(|e| parse_failure(file, e))?;
    let cfg = CheckConfig { bound: cli.bound, accept_bounded, split_cap: cli.split_cap, ..CheckConfig::default() };
    Ok(match check_proof(&t, &defs, &cfg) {
        Ok(root) => {
            let s = print_sequent(&root);
            Outcome::new(EXIT_OK, format!("accepted ({} nodes): {s}", t.size()), json!({ "command": "prove", "accepted": true, "nodes": t.size(), "root": s }))
        }
        Err(errs) => {
            let lines: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
            let paths: Vec<String> = errs.iter().map(|e| permccs::proof::path_string(&e.path)).collect();
            Outcome::new(
                EXIT_REJECTED,
                format!("rejected:\n{}", lines.join("\n")),
                json!({ "command": "prove", "accepted": false, "errors": lines, "paths": paths }),
            )
        }
    })
}

fn cmd_oracle(cli: &Cli, name: &str, systems: usize) -> Result<Outcome, Outcome> {
    let suites: Vec<Suite> = if name == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![name.parse().map_err(|e: permccs::oracles::UnknownSuite| {
            let known: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
            let msg = format!("{e}; known suites: all, {}", known.join(", "));
            Outcome::new(EXIT_PARSE, msg.clone(), json!({ "error": "usage", "message": msg }))
        })?]
    };
    let spec = GenSpec { seed: cli.seed, ..GenSpec::default() };
    let cfg = OracleConfig { systems, sys: sys_config(cli), ..OracleConfig::default() };
    let mut reports = Vec::new();
    for s in suites {
        reports.push(run_suite(s, &spec, &cfg).map_err(|e| Outcome::new(EXIT_FAIL, e.to_string(), json!({ "error": "oracle", "message": e.to_string() })))?);
    }
    let pass = reports.iter().all(|r| r.passed());
    let text = reports
        .iter()
        .map(|r| format!("{} {r}", if r.passed() { "pass" } else { "FAIL" }))
        .collect::<Vec<_>>()
        .join("\n");
    let j = json!({ "command": "oracle", "seed": cli.seed, "pass": pass, "reports": reports });
    Ok(Outcome::new(if pass { EXIT_OK } else { EXIT_FAIL }, text, j))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { file } => cmd_run(&cli, file),
        Command::Certify { file } => cmd_certify(&cli, file),
        Command::Satisfy { system, formula, env } => cmd_satisfy(&cli, system, formula, env),
        Command::Prove { file, accept_bounded } => cmd_prove(&cli, file, *accept_bounded),
        Command::Oracle { suite, systems } => cmd_oracle(&cli, suite, *systems),
    };
    let out = result.unwrap_or_else(|e| e);
    // A closed pipe downstream is not an error worth reporting.
    let _ = if cli.json {
        writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&out.json).expect("JSON values serialize"))
    } else if out.code == EXIT_PARSE || out.code == EXIT_BUDGET {
        writeln!(std::io::stderr(), "{}", out.text)
    } else {
        writeln!(std::io::stdout(), "{}", out.text)
    };
    ExitCode::from(out.code)
}
