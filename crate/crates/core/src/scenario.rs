//! Declarative scenario timelines, the builtin staged experiment, and
//! pass/fail evaluation of simulated traces.
//!
//! A scenario declares every DGU and line up front; events then connect
//! lines, enable the secondary layer, plug DGUs in and out, and step loads.
//! Checks assert the sharing and balancing metrics over time windows, which
//! is how a run turns into a CI verdict.

use crate::error::{Error, Result};
use crate::graph::{CommEdge, DguId, Line};
use crate::model::{DguSpec, Microgrid, PrimaryMode, Regime};

/// A DGU declaration: its parameters plus whether it is part of the grid at
/// time zero. Absent DGUs join later through plug-in events.
#[derive(Debug, Clone, PartialEq)]
pub struct DguDecl {
    pub spec: DguSpec,
    pub present: bool,
}

/// A line declaration: its parameters plus whether it is closed at time
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LineDecl {
    pub line: Line,
    pub closed: bool,
}

/// Structural or input change applied at one instant.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// Close a declared line between two present DGUs.
    ConnectLine { a: DguId, b: DguId },
    /// Activate the consensus layer for a set of present DGUs, zeroing
    /// their corrections.
    EnableSecondary { dgus: Vec<DguId> },
    /// Add a declared-but-absent DGU, closing its declared lines to present
    /// neighbors.
    PlugIn { dgu: DguId },
    /// Remove a present DGU.
    Unplug { dgu: DguId },
    /// Set the load current of a present DGU to a new constant (A).
    LoadStep { dgu: DguId, new_load: f64 },
}

impl EventKind {
    /// Key used to reject duplicate events on the same target at one time.
    fn target_key(&self) -> String {
        match self {
            EventKind::ConnectLine { a, b } => {
                let (lo, hi) = ((*a).min(*b), (*a).max(*b));
                format!("line:{lo}-{hi}")
            }
            EventKind::EnableSecondary { .. } => "enable".into(),
            EventKind::PlugIn { dgu } => format!("dgu:{dgu}"),
            EventKind::Unplug { dgu } => format!("dgu:{dgu}"),
            EventKind::LoadStep { dgu, .. } => format!("load:{dgu}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub time: f64,
    pub kind: EventKind,
}

/// A timed assertion on the trace.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckKind {
    /// Sharing error stays at or below the threshold (p.u.).
    CsBelow(f64),
    /// Sharing error stays strictly above the threshold (p.u.).
    CsAbove(f64),
    /// Balancing error stays at or below the threshold (V).
    VbBelow(f64),
    /// Balancing error stays strictly above the threshold (V).
    VbAbove(f64),
    /// `|I_ta - ratio * I_tb| <= rel_tol * |I_ta|` at every sample.
    CurrentRatio {
        a: DguId,
        b: DguId,
        ratio: f64,
        rel_tol: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    /// Inclusive time window the assertion is evaluated over.
    pub window: (f64, f64),
    pub kind: CheckKind,
}

/// A full experiment: initial grid, control configuration, event timeline,
/// and acceptance checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dgus: Vec<DguDecl>,
    pub lines: Vec<LineDecl>,
    /// Declared consensus coefficients; only the unit-scaling regime reads
    /// them, the commuting regime derives its own.
    pub comm: Vec<CommEdge>,
    pub mode: PrimaryMode,
    pub k_i: f64,
    pub regime: Regime,
    /// Common reference voltage (V).
    pub v_ref: f64,
    pub horizon: f64,
    /// Fixed integration step override (s).
    pub dt: Option<f64>,
    /// Enable the secondary layer for all initially present DGUs at t = 0.
    pub secondary_from_start: bool,
    pub events: Vec<TimedEvent>,
    pub checks: Vec<Check>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.dgus.is_empty() {
            return Err(Error::Parse("a scenario needs at least one DGU".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for d in &self.dgus {
            if !ids.insert(d.spec.id) {
                return Err(Error::Parse(format!("duplicate DGU id {}", d.spec.id)));
            }
        }
        if !self.dgus.iter().any(|d| d.present) {
            return Err(Error::Parse(
                "at least one DGU must be initially present".into(),
            ));
        }
        let declared = |id: DguId| ids.contains(&id);
        for l in &self.lines {
            if !declared(l.line.from) || !declared(l.line.to) {
                return Err(Error::Parse(format!(
                    "line {}-{} references an undeclared DGU",
                    l.line.from, l.line.to
                )));
            }
            if !(l.line.resistance > 0.0) {
                return Err(Error::Parse(format!(
                    "line {}-{} must have positive resistance",
                    l.line.from, l.line.to
                )));
            }
            if l.closed {
                let present = |id: DguId| self.dgus.iter().any(|d| d.spec.id == id && d.present);
                if !present(l.line.from) || !present(l.line.to) {
                    return Err(Error::Parse(format!(
                        "initially closed line {}-{} references an absent DGU",
                        l.line.from, l.line.to
                    )));
                }
            }
        }
        if matches!(self.regime, Regime::Commuting { .. }) && !self.comm.is_empty() {
            return Err(Error::Parse(
                "the commuting regime derives consensus coefficients from line conductances; \
                 remove the [comm] section"
                    .into(),
            ));
        }
        let mut pairs = std::collections::HashSet::new();
        for e in &self.comm {
            if !declared(e.a) || !declared(e.b) || e.a == e.b {
                return Err(Error::Parse(format!(
                    "communication edge {}-{} is invalid",
                    e.a, e.b
                )));
            }
            if !(e.coefficient > 0.0) {
                return Err(Error::Parse(format!(
                    "communication edge {}-{} must have a positive coefficient",
                    e.a, e.b
                )));
            }
            if !pairs.insert((e.a.min(e.b), e.a.max(e.b))) {
                return Err(Error::Parse(format!(
                    "communication edge {}-{} is declared twice (coefficients are symmetric)",
                    e.a, e.b
                )));
            }
        }
        if !(self.k_i > 0.0) {
            return Err(Error::Parse("k_i must be positive".into()));
        }
        if let Regime::Commuting { mu } = self.regime {
            if !(mu > 0.0) {
                return Err(Error::Parse("mu must be positive".into()));
            }
        }
        if let PrimaryMode::FirstOrder { omega_c } = self.mode {
            if !(omega_c > 0.0) {
                return Err(Error::Parse("omega_c must be positive".into()));
            }
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Parse("horizon must be positive".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::Parse("dt must be positive".into()));
            }
        }

        let mut seen_events = std::collections::HashSet::new();
        let mut last_time = 0.0_f64;
        for ev in &self.events {
            if !(ev.time > 0.0) || !(ev.time < self.horizon) {
                return Err(Error::Parse(format!(
                    "event at t = {} must lie strictly inside (0, {})",
                    ev.time, self.horizon
                )));
            }
            if ev.time < last_time {
                return Err(Error::Parse("events must be sorted by time".into()));
            }
            last_time = ev.time;
            if !seen_events.insert((ev.time.to_bits(), ev.kind.target_key())) {
                return Err(Error::Parse(format!(
                    "duplicate event for {} at t = {}",
                    ev.kind.target_key(),
                    ev.time
                )));
            }
            match &ev.kind {
                EventKind::ConnectLine { a, b } => {
                    if !self.lines.iter().any(|l| l.line.joins(*a, *b)) {
                        return Err(Error::Parse(format!("no declared line joins {a} and {b}")));
                    }
                }
                EventKind::EnableSecondary { dgus } => {
                    if dgus.is_empty() {
                        return Err(Error::Parse(
                            "enable-secondary needs at least one DGU".into(),
                        ));
                    }
                    for id in dgus {
                        if !declared(*id) {
                            return Err(Error::Parse(format!("DGU {id} is not declared")));
                        }
                    }
                }
                EventKind::PlugIn { dgu } | EventKind::Unplug { dgu } => {
                    if !declared(*dgu) {
                        return Err(Error::Parse(format!("DGU {dgu} is not declared")));
                    }
                }
                EventKind::LoadStep { dgu, new_load } => {
                    if !declared(*dgu) {
                        return Err(Error::Parse(format!("DGU {dgu} is not declared")));
                    }
                    if !new_load.is_finite() {
                        return Err(Error::Parse("load step value must be finite".into()));
                    }
                }
            }
        }

        for c in &self.checks {
            let (a, b) = c.window;
            if !(0.0 <= a && a <= b && b <= self.horizon) {
                return Err(Error::Parse(format!(
                    "check window [{a}, {b}] must lie inside [0, {}]",
                    self.horizon
                )));
            }
            if let CheckKind::CurrentRatio { ratio, rel_tol, .. } = c.kind {
                if !(ratio > 0.0) || !(rel_tol >= 0.0) {
                    return Err(Error::Parse(
                        "current-ratio check parameters are invalid".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Primary-loop abstraction after CLI overrides.
    pub fn resolve_mode(
        &self,
        mode_override: Option<PrimaryMode>,
        omega_c_override: Option<f64>,
    ) -> PrimaryMode {
        let base = mode_override.unwrap_or(self.mode);
        match (base, omega_c_override) {
            (PrimaryMode::FirstOrder { .. }, Some(omega_c)) => PrimaryMode::FirstOrder { omega_c },
            (m, _) => m,
        }
    }

    /// Grid at time zero: present DGUs, initially closed lines, and the
    /// secondary layer if configured to start active.
    pub fn initial_grid(&self, mode: PrimaryMode) -> Result<Microgrid> {
        let initial: Vec<DguSpec> = self
            .dgus
            .iter()
            .filter(|d| d.present)
            .map(|d| d.spec.clone())
            .collect();
        let mut grid = Microgrid::new(initial, self.k_i, self.regime, mode)?;
        for l in self.lines.iter().filter(|l| l.closed) {
            grid.connect_line(l.line.clone())?;
        }
        if self.secondary_from_start {
            grid.enable_secondary(&grid.ids(), &self.comm)?;
        }
        Ok(grid)
    }
}

/// Instantaneous sharing and balancing metrics over one DGU set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Largest pairwise spread of the per-unit currents (p.u.).
    pub cs_error: f64,
    /// Distance of the average voltage from the reference (V).
    pub vb_error: f64,
}

impl Metrics {
    pub fn compute(i_pu: &[f64], v: &[f64], v_ref: f64) -> Self {
        let cs_error = match i_pu.len() {
            0 => f64::NAN,
            _ => {
                let max = i_pu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = i_pu.iter().cloned().fold(f64::INFINITY, f64::min);
                max - min
            }
        };
        let vb_error = if v.is_empty() {
            f64::NAN
        } else {
            (v.iter().sum::<f64>() / v.len() as f64 - v_ref).abs()
        };
        Metrics { cs_error, vb_error }
    }
}

/// One sampled instant. Per-DGU slots follow the scenario's declaration
/// order; DGUs not currently part of the grid hold NaN.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: f64,
    pub v: Vec<f64>,
    pub i_t: Vec<f64>,
    pub i_pu: Vec<f64>,
    pub v_avg: f64,
    pub cs_error: f64,
    pub vb_error: f64,
}

/// Sampled time series of one run.
#[derive(Debug, Clone)]
pub struct Trace {
    pub dgu_ids: Vec<DguId>,
    pub v_ref: f64,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new(dgu_ids: Vec<DguId>, v_ref: f64) -> Self {
        Self {
            dgu_ids,
            v_ref,
            rows: Vec::new(),
        }
    }

    /// Rows with `t` in the inclusive window.
    pub fn window(&self, t0: f64, t1: f64) -> impl Iterator<Item = &TraceRow> {
        self.rows
            .iter()
            .filter(move |r| r.t >= t0 - 1e-9 && r.t <= t1 + 1e-9)
    }

    /// CSV rendering: header row, `.` decimal separator, LF line endings,
    /// and the sentinel `nan` for absent DGUs.
    pub fn to_csv(&self) -> String {
        fn fmt(x: f64) -> String {
            if x.is_nan() {
                "nan".into()
            } else {
                format!("{x}")
            }
        }
        let mut out = String::new();
        out.push('t');
        for prefix in ["V", "It", "Ipu"] {
            for id in &self.dgu_ids {
                out.push_str(&format!(",{prefix}_{id}"));
            }
        }
        out.push_str(",Vavg,cs_error,vb_error\n");
        for row in &self.rows {
            out.push_str(&fmt(row.t));
            for block in [&row.v, &row.i_t, &row.i_pu] {
                for x in block.iter() {
                    out.push(',');
                    out.push_str(&fmt(*x));
                }
            }
            out.push_str(&format!(
                ",{},{},{}\n",
                fmt(row.v_avg),
                fmt(row.cs_error),
                fmt(row.vb_error)
            ));
        }
        out
    }
}

/// Outcome of one timed assertion.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub check: Check,
    pub passed: bool,
    /// The extremal value the window actually achieved.
    pub achieved: f64,
}

/// Evaluate every check of the scenario against a trace.
pub fn evaluate(trace: &Trace, scenario: &Scenario) -> Result<Vec<CheckResult>> {
    let mut results = Vec::with_capacity(scenario.checks.len());
    for check in &scenario.checks {
        let (t0, t1) = check.window;
        let rows: Vec<&TraceRow> = trace.window(t0, t1).collect();
        if rows.is_empty() {
            return Err(Error::Parse(format!(
                "check window [{t0}, {t1}] contains no trace samples"
            )));
        }
        let (passed, achieved) = match &check.kind {
            CheckKind::CsBelow(thr) => {
                let worst = rows
                    .iter()
                    .map(|r| r.cs_error)
                    .fold(f64::NEG_INFINITY, f64::max);
                (worst <= *thr, worst)
            }
            CheckKind::CsAbove(thr) => {
                let best = rows
                    .iter()
                    .map(|r| r.cs_error)
                    .fold(f64::INFINITY, f64::min);
                (best > *thr, best)
            }
            CheckKind::VbBelow(thr) => {
                let worst = rows
                    .iter()
                    .map(|r| r.vb_error)
                    .fold(f64::NEG_INFINITY, f64::max);
                (worst <= *thr, worst)
            }
            CheckKind::VbAbove(thr) => {
                let best = rows
                    .iter()
                    .map(|r| r.vb_error)
                    .fold(f64::INFINITY, f64::min);
                (best > *thr, best)
            }
            CheckKind::CurrentRatio {
                a,
                b,
                ratio,
                rel_tol,
            } => {
                let ca = trace.dgu_ids.iter().position(|id| id == a);
                let cb = trace.dgu_ids.iter().position(|id| id == b);
                match (ca, cb) {
                    (Some(ca), Some(cb)) => {
                        let mut worst = 0.0_f64;
                        let mut ok = true;
                        for r in &rows {
                            let (ia, ib) = (r.i_t[ca], r.i_t[cb]);
                            if !ia.is_finite() || !ib.is_finite() {
                                ok = false;
                                worst = f64::NAN;
                                break;
                            }
                            let rel = (ia - ratio * ib).abs() / ia.abs().max(1e-12);
                            worst = worst.max(rel);
                        }
                        (ok && worst <= *rel_tol, worst)
                    }
                    _ => (false, f64::NAN),
                }
            }
        };
        results.push(CheckResult {
            check: check.clone(),
            passed,
            achieved,
        });
    }
    Ok(results)
}

/// One line per check, CI-friendly.
pub fn format_check_report(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        let (t0, t1) = r.check.window;
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        let what = match &r.check.kind {
            CheckKind::CsBelow(thr) => format!("cs_error <= {thr}"),
            CheckKind::CsAbove(thr) => format!("cs_error > {thr}"),
            CheckKind::VbBelow(thr) => format!("vb_error <= {thr}"),
            CheckKind::VbAbove(thr) => format!("vb_error > {thr}"),
            CheckKind::CurrentRatio {
                a,
                b,
                ratio,
                rel_tol,
            } => {
                format!("|It_{a} - {ratio} * It_{b}| <= {rel_tol} * It_{a}")
            }
        };
        out.push_str(&format!(
            "{verdict} [{t0:>6.2}, {t1:>6.2}] s  {what}  (achieved {achieved:.3e})\n",
            achieved = r.achieved
        ));
    }
    out
}

/// The seven-DGU staged experiment: all units start isolated, DGUs 1-6
/// connect at 2 s, their secondary layer activates at 5 s, DGU 7 plugs in
/// through DGUs 4 and 5 at 15 s, the DGU-1 load doubles at 25 s, and DGU 3
/// disconnects at 35 s. Rated currents are (10, 10, 10, 5, 5, 3.33, 3.33) A,
/// scaling factors equal the ratings, the reference is 48 V, `k_I = 1`, and
/// the commuting regime uses `mu = 1` so every coefficient is a line
/// conductance. Load currents are placeholder defaults proportional to the
/// ratings; override them in a scenario file if measured values exist.
pub fn builtin_stage_scenario() -> Scenario {
    let ratings = [10.0, 10.0, 10.0, 5.0, 5.0, 3.33, 3.33];
    let loads = [4.0, 4.0, 4.0, 2.0, 2.0, 1.5, 1.5];
    let dgus: Vec<DguDecl> = (0..7)
        .map(|i| DguDecl {
            spec: DguSpec {
                id: DguId(i as u32 + 1),
                rated_current: ratings[i],
                scaling_factor: ratings[i],
                v_ref: 48.0,
                load_current: loads[i],
            },
            present: i < 6,
        })
        .collect();

    let line_table: [(u32, u32, f64, f64); 9] = [
        (1, 2, 0.05, 2.1e-6),
        (1, 3, 0.07, 1.8e-6),
        (3, 4, 0.06, 1.0e-6),
        (2, 4, 0.04, 2.3e-6),
        (4, 5, 0.08, 1.8e-6),
        (1, 6, 0.10, 2.5e-6),
        (5, 6, 0.08, 3.0e-6),
        (4, 7, 0.09, 2.3e-6),
        (7, 5, 0.05, 2.4e-6),
    ];
    let lines: Vec<LineDecl> = line_table
        .iter()
        .map(|&(a, b, r, l)| LineDecl {
            line: Line {
                from: DguId(a),
                to: DguId(b),
                resistance: r,
                inductance: l,
            },
            closed: false,
        })
        .collect();

    let mut events: Vec<TimedEvent> = [(1, 2), (1, 3), (3, 4), (2, 4), (4, 5), (1, 6), (5, 6)]
        .iter()
        .map(|&(a, b)| TimedEvent {
            time: 2.0,
            kind: EventKind::ConnectLine {
                a: DguId(a),
                b: DguId(b),
            },
        })
        .collect();
    events.push(TimedEvent {
        time: 5.0,
        kind: EventKind::EnableSecondary {
            dgus: (1..=6).map(DguId).collect(),
        },
    });
    events.push(TimedEvent {
        time: 15.0,
        kind: EventKind::PlugIn { dgu: DguId(7) },
    });
    events.push(TimedEvent {
        time: 25.0,
        kind: EventKind::LoadStep {
            dgu: DguId(1),
            new_load: 8.0,
        },
    });
    events.push(TimedEvent {
        time: 35.0,
        kind: EventKind::Unplug { dgu: DguId(3) },
    });

    let cs_thr = 1e-2;
    let vb_thr = 1e-3;
    let mut checks = vec![Check {
        window: (4.0, 4.99),
        kind: CheckKind::CsAbove(0.05),
    }];
    for (t0, t1) in [(13.0, 15.0), (23.0, 25.0), (33.0, 35.0), (43.0, 45.0)] {
        checks.push(Check {
            window: (t0, t1),
            kind: CheckKind::CsBelow(cs_thr),
        });
        checks.push(Check {
            window: (t0, t1),
            kind: CheckKind::VbBelow(vb_thr),
        });
    }
    checks.push(Check {
        window: (23.0, 25.0),
        kind: CheckKind::CurrentRatio {
            a: DguId(1),
            b: DguId(4),
            ratio: 2.0,
            rel_tol: 1e-2,
        },
    });
    checks.push(Check {
        window: (23.0, 25.0),
        kind: CheckKind::CurrentRatio {
            a: DguId(1),
            b: DguId(7),
            ratio: 3.0,
            rel_tol: 1e-2,
        },
    });

    Scenario {
        dgus,
        lines,
        comm: Vec::new(),
        mode: PrimaryMode::FirstOrder {
            omega_c: 2.0 * std::f64::consts::PI * 100.0,
        },
        k_i: 1.0,
        regime: Regime::Commuting { mu: 1.0 },
        v_ref: 48.0,
        horizon: 45.0,
        dt: None,
        secondary_from_start: false,
        events,
        checks,
    }
}
