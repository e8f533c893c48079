//! Command-line entry point and the scenario file format.
//!
//! Subcommands: `simulate` runs a scenario file, `analyze` writes the
//! spectral report of a scenario's declared network, `counterexample`
//! reproduces the negative-eigenvalue fixture, and `stages` runs the builtin
//! staged experiment under both primary-loop abstractions. Exit codes: 0 on
//! success with all embedded checks passing, 1 on failed checks, 2 on input
//! problems, 3 on connectivity or regime violations, 4 on numerical aborts.
//!
//! The scenario format is a plain text document with `[system]`, `[dgus]`,
//! `[lines]`, `[comm]`, `[events]`, and `[checks]` sections; the exact
//! grammar lives in `docs/scenario-format.md`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::dynamics::{simulate, SimOptions};
use crate::equilibria::attach_rates;
use crate::error::{Error, Result};
use crate::graph::{CommEdge, CommNetwork, DguId, ElectricalNetwork, Line};
use crate::model::{CoupledModel, DguSpec, PrimaryMode, Regime};
use crate::scenario::{
    builtin_stage_scenario, evaluate, format_check_report, Check, CheckKind, CheckResult, DguDecl,
    EventKind, LineDecl, Scenario, TimedEvent, Trace,
};
use crate::spectral::counterexample::{self, REFERENCE_TOLERANCE};
use crate::spectral::ScalingMatrix;

/// Parsed command line of one run.
#[derive(Debug, Parser)]
#[command(
    name = "mgc",
    version,
    about = "Consensus secondary-control simulator for DC microgrids"
)]
pub struct RunConfig {
    /// Output directory for traces and reports.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Fixed integration step in seconds (default: stability-derived).
    #[arg(long, global = true)]
    pub dt: Option<f64>,

    /// First-order primary-loop bandwidth override in rad/s.
    #[arg(long, global = true)]
    pub omega_c: Option<f64>,

    /// Record every N-th integration step.
    #[arg(long, global = true)]
    pub stride: Option<usize>,

    /// Drop unplugged DGUs without redistributing their corrections.
    #[arg(long, global = true)]
    pub raw_removal: bool,

    /// Seed recorded in logs; reserved for randomized diagnostics.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run a scenario file; write the trace CSV and the check report.
    Simulate {
        /// Scenario file path.
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Analyze the full declared network of a scenario file.
    Analyze {
        /// Scenario file path.
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Reproduce the stored negative-eigenvalue counterexample and check it
    /// against its reference spectrum.
    Counterexample,
    /// Run the builtin staged experiment under both primary abstractions.
    Stages,
}

/// Entry point used by the binary: returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter("MGC_LOG")).try_init();
    let config = match RunConfig::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(seed) = config.seed {
        log::info!("seed = {seed} (no randomized paths are active in this invocation)");
    }
    match dispatch(&config) {
        Ok(all_checks_passed) => {
            if all_checks_passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(config: &RunConfig) -> Result<bool> {
    match &config.command {
        CliCommand::Simulate { scenario } => cmd_simulate(config, scenario),
        CliCommand::Analyze { scenario } => cmd_analyze(config, scenario),
        CliCommand::Counterexample => cmd_counterexample(),
        CliCommand::Stages => cmd_stages(config),
    }
}

fn sim_options(config: &RunConfig, mode_override: Option<PrimaryMode>) -> SimOptions {
    SimOptions {
        dt: config.dt,
        stride: config.stride,
        omega_c: config.omega_c,
        mode_override,
        raw_removal: config.raw_removal,
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read scenario {}: {e}", path.display())))?;
    parse_scenario(&text)
}

fn cmd_simulate(config: &RunConfig, path: &Path) -> Result<bool> {
    let scenario = load_scenario(path)?;
    let trace = simulate(&scenario, &sim_options(config, None))?;
    let csv_path = write_file(&config.out, "trace.csv", &trace.to_csv())?;
    log::info!("trace written to {}", csv_path.display());
    let results = evaluate(&trace, &scenario)?;
    let report = format_check_report(&results);
    write_file(&config.out, "checks.txt", &report)?;
    print!("{report}");
    println!("trace: {}", csv_path.display());
    Ok(results.iter().all(|r| r.passed))
}

/// The full declared network of a scenario: every DGU and every line,
/// regardless of initial presence, with communication per the regime.
fn full_network_model(scenario: &Scenario, mode: PrimaryMode) -> Result<CoupledModel> {
    let ids: Vec<DguId> = scenario.dgus.iter().map(|d| d.spec.id).collect();
    let lines: Vec<Line> = scenario.lines.iter().map(|l| l.line.clone()).collect();
    let el = ElectricalNetwork::new(ids.clone(), lines)?;
    let comm = match scenario.regime {
        Regime::Commuting { mu } => CommNetwork::from_electrical(&el, mu, scenario.k_i)?,
        Regime::DIdentity => CommNetwork::new(ids, scenario.comm.clone(), scenario.k_i)?,
    };
    let scaling = ScalingMatrix::from_scaling_factors(
        &scenario
            .dgus
            .iter()
            .map(|d| d.spec.scaling_factor)
            .collect::<Vec<_>>(),
    )?;
    CoupledModel::assemble(el, comm, scaling, mode)
}

fn cmd_analyze(config: &RunConfig, path: &Path) -> Result<bool> {
    let scenario = load_scenario(path)?;
    let mode = scenario.resolve_mode(None, config.omega_c);
    let model = full_network_model(&scenario, mode)?;
    let mut report = model.analyze()?;
    attach_rates(&mut report, mode.omega_c().or(config.omega_c));
    let text = report.to_text();
    write_file(&config.out, "spectral_report.txt", &text)?;
    write_file(&config.out, "spectral_report.kv", &report.to_key_values())?;
    print!("{text}");
    Ok(report.is_consistent())
}

fn cmd_counterexample() -> Result<bool> {
    let fix = counterexample::counterexample();
    print!("{}", fix.report.to_text());
    let worst = counterexample::reference_mismatch(&fix.report.eigenvalues);
    let ok = worst <= REFERENCE_TOLERANCE;
    println!(
        "{} reference spectrum reproduced within {worst:.2e} (tolerance {REFERENCE_TOLERANCE:.0e})",
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}

fn cmd_stages(config: &RunConfig) -> Result<bool> {
    let scenario = builtin_stage_scenario();
    write_file(
        &config.out,
        "stages_scenario.txt",
        &serialize_scenario(&scenario),
    )?;

    let omega_c = config
        .omega_c
        .or(scenario.mode.omega_c())
        .expect("builtin scenario is first-order");
    let variants: [(&str, PrimaryMode); 2] = [
        ("unit_gain", PrimaryMode::UnitGain),
        ("first_order", PrimaryMode::FirstOrder { omega_c }),
    ];

    // Independent sub-runs with isolated state; one worker per abstraction.
    let outcomes: Vec<Result<(String, Trace, Vec<CheckResult>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = variants
            .iter()
            .map(|(name, mode)| {
                let scenario = &scenario;
                let opts = sim_options(config, Some(*mode));
                scope.spawn(move || {
                    let trace = simulate(scenario, &opts)?;
                    let results = evaluate(&trace, scenario)?;
                    Ok((name.to_string(), trace, results))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("stage worker panicked"))
            .collect()
    });

    let mut all_passed = true;
    for outcome in outcomes {
        let (name, trace, results) = outcome?;
        let csv = write_file(&config.out, &format!("stages_{name}.csv"), &trace.to_csv())?;
        let report = format_check_report(&results);
        write_file(&config.out, &format!("stages_{name}_checks.txt"), &report)?;
        println!("== {name} ({})", csv.display());
        print!("{report}");
        all_passed &= results.iter().all(|r| r.passed);
    }
    Ok(all_passed)
}

// ---------------------------------------------------------------------------
// Scenario text format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    System,
    Dgus,
    Lines,
    Comm,
    Events,
    Checks,
}

fn parse_num(tok: &str, what: &str, line_no: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line_no}: cannot parse {what} from `{tok}`")))
}

fn parse_id(tok: &str, line_no: usize) -> Result<DguId> {
    tok.parse::<u32>()
        .map(DguId)
        .map_err(|_| Error::Parse(format!("line {line_no}: cannot parse DGU id from `{tok}`")))
}

fn parse_flag(tok: &str, line_no: usize) -> Result<bool> {
    match tok {
        "yes" | "true" => Ok(true),
        "no" | "false" => Ok(false),
        _ => Err(Error::Parse(format!(
            "line {line_no}: expected yes/no, found `{tok}`"
        ))),
    }
}

/// Parse the structured scenario document. The result is validated, so any
/// structural violation (nonpositive resistance, unknown event target,
/// asymmetric coefficient tables, ...) surfaces as a parse error.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut section = Section::None;

    #[derive(Default)]
    struct System {
        mode: Option<String>,
        omega_c: Option<f64>,
        k_i: Option<f64>,
        regime: Option<String>,
        mu: Option<f64>,
        v_ref: Option<f64>,
        horizon: Option<f64>,
        dt: Option<f64>,
        secondary_from_start: Option<bool>,
    }
    let mut sys = System::default();
    struct DguRow {
        id: DguId,
        rated: f64,
        load: f64,
        present: bool,
        scaling: Option<f64>,
        v_ref: Option<f64>,
    }
    let mut dgus: Vec<DguRow> = Vec::new();
    let mut lines: Vec<LineDecl> = Vec::new();
    let mut comm: Vec<CommEdge> = Vec::new();
    let mut events: Vec<TimedEvent> = Vec::new();
    let mut checks: Vec<Check> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name {
                "system" => Section::System,
                "dgus" => Section::Dgus,
                "lines" => Section::Lines,
                "comm" => Section::Comm,
                "events" => Section::Events,
                "checks" => Section::Checks,
                _ => {
                    return Err(Error::Parse(format!(
                        "line {line_no}: unknown section [{name}]"
                    )))
                }
            };
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::None => {
                return Err(Error::Parse(format!(
                    "line {line_no}: content before the first section header"
                )))
            }
            Section::System => {
                let (key, value) = split_key_value(line, line_no)?;
                match key {
                    "mode" => sys.mode = Some(value.to_string()),
                    "omega_c" => sys.omega_c = Some(parse_num(value, "omega_c", line_no)?),
                    "k_i" => sys.k_i = Some(parse_num(value, "k_i", line_no)?),
                    "regime" => sys.regime = Some(value.to_string()),
                    "mu" => sys.mu = Some(parse_num(value, "mu", line_no)?),
                    "v_ref" => sys.v_ref = Some(parse_num(value, "v_ref", line_no)?),
                    "horizon" => sys.horizon = Some(parse_num(value, "horizon", line_no)?),
                    "dt" => sys.dt = Some(parse_num(value, "dt", line_no)?),
                    "secondary_from_start" => {
                        sys.secondary_from_start = Some(parse_flag(value, line_no)?)
                    }
                    _ => {
                        return Err(Error::Parse(format!(
                            "line {line_no}: unknown [system] key `{key}`"
                        )))
                    }
                }
            }
            Section::Dgus => {
                if toks.len() < 4 {
                    return Err(Error::Parse(format!(
                        "line {line_no}: expected `id rated_a load_a present [key=value ...]`"
                    )));
                }
                let mut row = DguRow {
                    id: parse_id(toks[0], line_no)?,
                    rated: parse_num(toks[1], "rated current", line_no)?,
                    load: parse_num(toks[2], "load current", line_no)?,
                    present: parse_flag(toks[3], line_no)?,
                    scaling: None,
                    v_ref: None,
                };
                for extra in &toks[4..] {
                    let (k, v) = split_key_value(extra, line_no)?;
                    match k {
                        "scaling" => row.scaling = Some(parse_num(v, "scaling", line_no)?),
                        "v_ref" => row.v_ref = Some(parse_num(v, "v_ref", line_no)?),
                        _ => {
                            return Err(Error::Parse(format!(
                                "line {line_no}: unknown DGU attribute `{k}`"
                            )))
                        }
                    }
                }
                dgus.push(row);
            }
            Section::Lines => {
                if toks.len() != 5 {
                    return Err(Error::Parse(format!(
                        "line {line_no}: expected `from to r_ohm l_h closed`"
                    )));
                }
                lines.push(LineDecl {
                    line: Line {
                        from: parse_id(toks[0], line_no)?,
                        to: parse_id(toks[1], line_no)?,
                        resistance: parse_num(toks[2], "resistance", line_no)?,
                        inductance: parse_num(toks[3], "inductance", line_no)?,
                    },
                    closed: parse_flag(toks[4], line_no)?,
                });
            }
            Section::Comm => {
                if toks.len() != 3 {
                    return Err(Error::Parse(format!(
                        "line {line_no}: expected `a b coefficient`"
                    )));
                }
                comm.push(CommEdge {
                    a: parse_id(toks[0], line_no)?,
                    b: parse_id(toks[1], line_no)?,
                    coefficient: parse_num(toks[2], "coefficient", line_no)?,
                });
            }
            Section::Events => {
                if toks.len() < 2 {
                    return Err(Error::Parse(format!(
                        "line {line_no}: expected `time kind ...`"
                    )));
                }
                let time = parse_num(toks[0], "event time", line_no)?;
                let kind = match (toks[1], &toks[2..]) {
                    ("connect-line", [a, b]) => EventKind::ConnectLine {
                        a: parse_id(a, line_no)?,
                        b: parse_id(b, line_no)?,
                    },
                    ("enable-secondary", rest) if !rest.is_empty() => EventKind::EnableSecondary {
                        dgus: rest
                            .iter()
                            .map(|t| parse_id(t, line_no))
                            .collect::<Result<Vec<_>>>()?,
                    },
                    ("plug-in", [d]) => EventKind::PlugIn {
                        dgu: parse_id(d, line_no)?,
                    },
                    ("unplug", [d]) => EventKind::Unplug {
                        dgu: parse_id(d, line_no)?,
                    },
                    ("load-step", [d, v]) => EventKind::LoadStep {
                        dgu: parse_id(d, line_no)?,
                        new_load: parse_num(v, "load", line_no)?,
                    },
                    _ => {
                        return Err(Error::Parse(format!(
                            "line {line_no}: unknown or malformed event `{}`",
                            toks[1]
                        )))
                    }
                };
                events.push(TimedEvent { time, kind });
            }
            Section::Checks => {
                if toks.len() < 4 {
                    return Err(Error::Parse(format!(
                        "line {line_no}: expected `t0 t1 kind args...`"
                    )));
                }
                let window = (
                    parse_num(toks[0], "window start", line_no)?,
                    parse_num(toks[1], "window end", line_no)?,
                );
                let kind = match (toks[2], &toks[3..]) {
                    ("cs-below", [t]) => CheckKind::CsBelow(parse_num(t, "threshold", line_no)?),
                    ("cs-above", [t]) => CheckKind::CsAbove(parse_num(t, "threshold", line_no)?),
                    ("vb-below", [t]) => CheckKind::VbBelow(parse_num(t, "threshold", line_no)?),
                    ("vb-above", [t]) => CheckKind::VbAbove(parse_num(t, "threshold", line_no)?),
                    ("current-ratio", [a, b, ratio, tol]) => CheckKind::CurrentRatio {
                        a: parse_id(a, line_no)?,
                        b: parse_id(b, line_no)?,
                        ratio: parse_num(ratio, "ratio", line_no)?,
                        rel_tol: parse_num(tol, "tolerance", line_no)?,
                    },
                    _ => {
                        return Err(Error::Parse(format!(
                            "line {line_no}: unknown or malformed check `{}`",
                            toks[2]
                        )))
                    }
                };
                checks.push(Check { window, kind });
            }
        }
    }

    let mode = match sys.mode.as_deref() {
        Some("unit-gain") => PrimaryMode::UnitGain,
        Some("first-order") => PrimaryMode::FirstOrder {
            omega_c: sys.omega_c.ok_or_else(|| {
                Error::Parse("[system] omega_c is required in first-order mode".into())
            })?,
        },
        Some(other) => {
            return Err(Error::Parse(format!(
                "[system] mode must be unit-gain or first-order, found `{other}`"
            )))
        }
        None => return Err(Error::Parse("[system] mode is missing".into())),
    };
    let regime = match sys.regime.as_deref() {
        Some("d-identity") => Regime::DIdentity,
        Some("commuting") => Regime::Commuting {
            mu: sys.mu.ok_or_else(|| {
                Error::Parse("[system] mu is required in the commuting regime".into())
            })?,
        },
        Some(other) => {
            return Err(Error::Parse(format!(
                "[system] regime must be d-identity or commuting, found `{other}`"
            )))
        }
        None => return Err(Error::Parse("[system] regime is missing".into())),
    };
    let v_ref = sys
        .v_ref
        .ok_or_else(|| Error::Parse("[system] v_ref is missing".into()))?;
    let horizon = sys
        .horizon
        .ok_or_else(|| Error::Parse("[system] horizon is missing".into()))?;
    let k_i = sys
        .k_i
        .ok_or_else(|| Error::Parse("[system] k_i is missing".into()))?;

    let dgus: Vec<DguDecl> = dgus
        .into_iter()
        .map(|row| DguDecl {
            spec: DguSpec {
                id: row.id,
                rated_current: row.rated,
                scaling_factor: row.scaling.unwrap_or(row.rated),
                v_ref: row.v_ref.unwrap_or(v_ref),
                load_current: row.load,
            },
            present: row.present,
        })
        .collect();

    events.sort_by(|a, b| a.time.total_cmp(&b.time));

    let scenario = Scenario {
        dgus,
        lines,
        comm,
        mode,
        k_i,
        regime,
        v_ref,
        horizon,
        dt: sys.dt,
        secondary_from_start: sys.secondary_from_start.unwrap_or(false),
        events,
        checks,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn split_key_value(s: &str, line_no: usize) -> Result<(&str, &str)> {
    let mut it = s.splitn(2, '=');
    match (it.next(), it.next()) {
        (Some(k), Some(v)) => Ok((k.trim(), v.trim())),
        _ => Err(Error::Parse(format!(
            "line {line_no}: expected `key = value`"
        ))),
    }
}

/// Render a scenario back into the text format. Numbers use the shortest
/// round-trip representation, so parse(serialize(s)) == s.
pub fn serialize_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    out.push_str("[system]\n");
    match s.mode {
        PrimaryMode::UnitGain => out.push_str("mode = unit-gain\n"),
        PrimaryMode::FirstOrder { omega_c } => {
            out.push_str("mode = first-order\n");
            out.push_str(&format!("omega_c = {omega_c}\n"));
        }
    }
    out.push_str(&format!("k_i = {}\n", s.k_i));
    match s.regime {
        Regime::DIdentity => out.push_str("regime = d-identity\n"),
        Regime::Commuting { mu } => {
            out.push_str("regime = commuting\n");
            out.push_str(&format!("mu = {mu}\n"));
        }
    }
    out.push_str(&format!("v_ref = {}\n", s.v_ref));
    out.push_str(&format!("horizon = {}\n", s.horizon));
    if let Some(dt) = s.dt {
        out.push_str(&format!("dt = {dt}\n"));
    }
    if s.secondary_from_start {
        out.push_str("secondary_from_start = yes\n");
    }

    out.push_str("\n[dgus]\n# id rated_a load_a present\n");
    for d in &s.dgus {
        out.push_str(&format!(
            "{} {} {} {}",
            d.spec.id,
            d.spec.rated_current,
            d.spec.load_current,
            if d.present { "yes" } else { "no" }
        ));
        if d.spec.scaling_factor != d.spec.rated_current {
            out.push_str(&format!(" scaling={}", d.spec.scaling_factor));
        }
        if d.spec.v_ref != s.v_ref {
            out.push_str(&format!(" v_ref={}", d.spec.v_ref));
        }
        out.push('\n');
    }

    out.push_str("\n[lines]\n# from to r_ohm l_h closed\n");
    for l in &s.lines {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            l.line.from,
            l.line.to,
            l.line.resistance,
            l.line.inductance,
            if l.closed { "yes" } else { "no" }
        ));
    }

    out.push_str("\n[comm]\n");
    for e in &s.comm {
        out.push_str(&format!("{} {} {}\n", e.a, e.b, e.coefficient));
    }

    out.push_str("\n[events]\n");
    for ev in &s.events {
        let kind = match &ev.kind {
            EventKind::ConnectLine { a, b } => format!("connect-line {a} {b}"),
            EventKind::EnableSecondary { dgus } => {
                let ids: Vec<String> = dgus.iter().map(|d| d.to_string()).collect();
                format!("enable-secondary {}", ids.join(" "))
            }
            EventKind::PlugIn { dgu } => format!("plug-in {dgu}"),
            EventKind::Unplug { dgu } => format!("unplug {dgu}"),
            EventKind::LoadStep { dgu, new_load } => format!("load-step {dgu} {new_load}"),
        };
        out.push_str(&format!("{} {kind}\n", ev.time));
    }

    out.push_str("\n[checks]\n");
    for c in &s.checks {
        let kind = match &c.kind {
            CheckKind::CsBelow(t) => format!("cs-below {t}"),
            CheckKind::CsAbove(t) => format!("cs-above {t}"),
            CheckKind::VbBelow(t) => format!("vb-below {t}"),
            CheckKind::VbAbove(t) => format!("vb-above {t}"),
            CheckKind::CurrentRatio {
                a,
                b,
                ratio,
                rel_tol,
            } => {
                format!("current-ratio {a} {b} {ratio} {rel_tol}")
            }
        };
        out.push_str(&format!("{} {} {kind}\n", c.window.0, c.window.1));
    }
    out
}
