//! Time-domain simulation of the closed-loop microgrid.
//!
//! Both abstractions integrate with a fixed-step classical Runge-Kutta
//! scheme: the dynamics are linear and non-stiff once the step respects the
//! spectrum, and a fixed step keeps runs bit-reproducible. Inputs are
//! piecewise constant; scenario events mutate the grid exactly at their
//! timestamps and every integration segment lands on them.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::graph::ElectricalNetwork;
use crate::model::{CoupledModel, Microgrid, PrimaryMode};
use crate::pnp;
use crate::scenario::{EventKind, Metrics, Scenario, Trace, TraceRow};
use crate::spectral::ScalingMatrix;

/// Integrator state at one instant.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    /// Secondary-layer voltage corrections (V).
    pub delta_v: DVector<f64>,
    /// PCC voltages (V); populated in first-order mode only. Under unit
    /// gain the voltage is identically `delta_v + v_ref`.
    pub v: Option<DVector<f64>>,
}

impl SimState {
    pub fn initial(grid: &Microgrid) -> Self {
        let n = grid.n();
        let v = match grid.mode() {
            PrimaryMode::UnitGain => None,
            PrimaryMode::FirstOrder { .. } => Some(grid.v_ref_vec()),
        };
        Self {
            t: 0.0,
            delta_v: DVector::zeros(n),
            v,
        }
    }

    /// PCC voltages implied by the state.
    pub fn voltages(&self, v_ref: &DVector<f64>) -> DVector<f64> {
        match &self.v {
            Some(v) => v.clone(),
            None => &self.delta_v + v_ref,
        }
    }

    fn is_finite(&self) -> bool {
        self.delta_v.iter().all(|x| x.is_finite())
            && self
                .v
                .as_ref()
                .map(|v| v.iter().all(|x| x.is_finite()))
                .unwrap_or(true)
    }
}

/// Electrical quantities derived from one voltage profile.
#[derive(Debug, Clone)]
pub struct Outputs {
    /// Line currents (A), one per line, signed along the line orientation.
    pub i_line: DVector<f64>,
    /// DGU output currents (A).
    pub i_t: DVector<f64>,
    /// Output currents in per-unit, `d_i I_ti`.
    pub i_pu: DVector<f64>,
    /// Average PCC voltage (V).
    pub v_avg: f64,
}

/// Right-hand side of the unit-gain loop:
/// `dV' = -Q dV - L D I_L - Q V_ref`.
pub fn rhs_unit_gain(
    model: &CoupledModel,
    delta_v: &DVector<f64>,
    i_load: &DVector<f64>,
    v_ref: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = model.n();
    if delta_v.len() != n || i_load.len() != n || v_ref.len() != n {
        return Err(Error::Dimension(
            "unit-gain right-hand side inputs disagree".into(),
        ));
    }
    Ok(-(model.q_mat() * (delta_v + v_ref)) - model.l_d(i_load))
}

/// Right-hand side of the first-order loop:
/// `dV' = -Q V - L D I_L` and `V' = omega_c (dV - V + V_ref)`.
pub fn rhs_first_order(
    model: &CoupledModel,
    delta_v: &DVector<f64>,
    v: &DVector<f64>,
    i_load: &DVector<f64>,
    v_ref: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = model.n();
    if delta_v.len() != n || v.len() != n || i_load.len() != n || v_ref.len() != n {
        return Err(Error::Dimension(
            "first-order right-hand side inputs disagree".into(),
        ));
    }
    let omega_c = model
        .mode()
        .omega_c()
        .ok_or_else(|| Error::UnsupportedRegime("model is not in first-order mode".into()))?;
    let d_delta_v = -(model.q_mat() * v) - model.l_d(i_load);
    let d_v = (delta_v - v + v_ref) * omega_c;
    Ok((d_delta_v, d_v))
}

/// One classical fourth-order Runge-Kutta step with constant inputs.
pub fn step(
    model: &CoupledModel,
    state: &SimState,
    dt: f64,
    i_load: &DVector<f64>,
    v_ref: &DVector<f64>,
) -> Result<SimState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Numerical(format!("invalid time step {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite state at t = {}",
            state.t
        )));
    }
    let next = match (&state.v, model.mode()) {
        (None, PrimaryMode::UnitGain) => {
            let f = |x: &DVector<f64>| rhs_unit_gain(model, x, i_load, v_ref);
            let x = &state.delta_v;
            let k1 = f(x)?;
            let k2 = f(&(x + &k1 * (dt / 2.0)))?;
            let k3 = f(&(x + &k2 * (dt / 2.0)))?;
            let k4 = f(&(x + &k3 * dt))?;
            let delta_v = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            SimState {
                t: state.t + dt,
                delta_v,
                v: None,
            }
        }
        (Some(v), PrimaryMode::FirstOrder { .. }) => {
            let f = |xd: &DVector<f64>, xv: &DVector<f64>| {
                rhs_first_order(model, xd, xv, i_load, v_ref)
            };
            let (xd, xv) = (&state.delta_v, v);
            let (kd1, kv1) = f(xd, xv)?;
            let (kd2, kv2) = f(&(xd + &kd1 * (dt / 2.0)), &(xv + &kv1 * (dt / 2.0)))?;
            let (kd3, kv3) = f(&(xd + &kd2 * (dt / 2.0)), &(xv + &kv2 * (dt / 2.0)))?;
            let (kd4, kv4) = f(&(xd + &kd3 * dt), &(xv + &kv3 * dt))?;
            let delta_v = xd + (kd1 + kd2 * 2.0 + kd3 * 2.0 + kd4) * (dt / 6.0);
            let v_next = xv + (kv1 + kv2 * 2.0 + kv3 * 2.0 + kv4) * (dt / 6.0);
            SimState {
                t: state.t + dt,
                delta_v,
                v: Some(v_next),
            }
        }
        _ => {
            return Err(Error::Dimension(
                "state shape does not match the primary-loop mode".into(),
            ))
        }
    };
    if !next.is_finite() {
        return Err(Error::Numerical(format!(
            "integration diverged to a non-finite state at t = {}",
            next.t
        )));
    }
    Ok(next)
}

/// Line currents, output currents, per-unit currents, and the average PCC
/// voltage implied by a voltage profile:
/// `I_l = -W B^T V`, `I_t = I_L - B I_l`.
pub fn compute_outputs(
    v: &DVector<f64>,
    i_load: &DVector<f64>,
    el: &ElectricalNetwork,
    scaling: &ScalingMatrix,
) -> Result<Outputs> {
    let n = el.node_count();
    if v.len() != n || i_load.len() != n || scaling.len() != n {
        return Err(Error::Dimension(
            "output computation inputs disagree".into(),
        ));
    }
    let b = el.incidence_matrix();
    let w = el.conductances();
    let i_line = -(w.component_mul(&(b.transpose() * v)));
    let i_t = i_load - &b * &i_line;
    let i_pu = scaling.scale(&i_t);
    Ok(Outputs {
        i_line,
        i_t,
        i_pu,
        v_avg: v.mean(),
    })
}

/// Default integration step: `min(1e-3, 0.1/omega_c, 0.1/lambda_max(Q))`,
/// with absent terms dropped.
pub fn default_time_step(mode: PrimaryMode, lambda_max_q: f64) -> f64 {
    let mut dt = 1e-3_f64;
    if let Some(omega_c) = mode.omega_c() {
        dt = dt.min(0.1 / omega_c);
    }
    if lambda_max_q > 0.0 {
        dt = dt.min(0.1 / lambda_max_q);
    }
    dt
}

/// Largest step the classical Runge-Kutta stability region tolerates for
/// the current spectrum, with a small safety margin.
pub fn max_stable_time_step(mode: PrimaryMode, lambda_max_q: f64) -> f64 {
    let fastest = match mode.omega_c() {
        // Complex closed-loop pairs have modulus sqrt(gamma * omega_c).
        Some(omega_c) => omega_c.max((lambda_max_q * omega_c).sqrt()),
        None => lambda_max_q,
    };
    if fastest > 0.0 {
        2.5 / fastest
    } else {
        f64::INFINITY
    }
}

/// Knobs of one simulation run.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Fixed integration step; the per-segment default rule applies when
    /// absent.
    pub dt: Option<f64>,
    /// Record every N-th step instead of the derived sampling interval.
    pub stride: Option<usize>,
    /// Override of the first-order primary bandwidth (rad/s).
    pub omega_c: Option<f64>,
    /// Force a primary-loop abstraction regardless of the scenario.
    pub mode_override: Option<PrimaryMode>,
    /// Remove unplugged DGUs without the correction redistribution.
    pub raw_removal: bool,
}

/// Run a scenario to its horizon and record the sampled trace.
///
/// Events apply instantaneously at their timestamps; each integration
/// segment is stepped with a uniform step that divides the segment exactly.
/// The sample at an event time is the pre-event state.
pub fn simulate(scenario: &Scenario, opts: &SimOptions) -> Result<Trace> {
    scenario.validate()?;
    let mode = scenario.resolve_mode(opts.mode_override, opts.omega_c);
    let mut grid = scenario.initial_grid(mode)?;
    let mut state = SimState::initial(&grid);

    let columns: Vec<_> = scenario.dgus.iter().map(|d| d.spec.id).collect();
    let mut trace = Trace::new(columns.clone(), scenario.v_ref);

    // Group events by timestamp; validation guarantees canonical order.
    let mut boundaries: Vec<(f64, Vec<&EventKind>)> = Vec::new();
    for ev in &scenario.events {
        match boundaries.last_mut() {
            Some((t, group)) if *t == ev.time => group.push(&ev.kind),
            _ => boundaries.push((ev.time, vec![&ev.kind])),
        }
    }
    boundaries.push((scenario.horizon, Vec::new()));

    record_row(&mut trace, &grid, &state, &columns)?;

    let mut t_start = 0.0;
    for (t_end, group) in boundaries {
        let (model, report) = grid.validate_for_simulation()?;
        let lambda_max = report
            .as_ref()
            .map(|r| r.max_abs_eigenvalue())
            .unwrap_or(0.0);
        let dt_target = opts
            .dt
            .or(scenario.dt)
            .unwrap_or_else(|| default_time_step(grid.mode(), lambda_max));
        let dt_max = max_stable_time_step(grid.mode(), lambda_max);
        if dt_target > dt_max {
            return Err(Error::Parse(format!(
                "time step {dt_target} exceeds the stability bound {dt_max:.3e} of the current \
                 configuration"
            )));
        }

        let span = t_end - t_start;
        let n_steps = (span / dt_target).ceil().max(1.0) as usize;
        let h = span / n_steps as f64;
        let sample_interval = h.max(scenario.horizon / 1e4);
        let stride = opts
            .stride
            .unwrap_or(((sample_interval / h).round() as usize).max(1));

        let i_load = grid.i_load_vec();
        let v_ref = grid.v_ref_vec();
        for k in 1..=n_steps {
            state = step(&model, &state, h, &i_load, &v_ref)?;
            state.t = t_start + h * k as f64;
            if k % stride == 0 || k == n_steps {
                record_row(&mut trace, &grid, &state, &columns)?;
            }
        }
        state.t = t_end;

        for kind in group {
            apply_event(&mut grid, &mut state, scenario, kind, opts)?;
        }
        t_start = t_end;
    }
    Ok(trace)
}

fn apply_event(
    grid: &mut Microgrid,
    state: &mut SimState,
    scenario: &Scenario,
    kind: &EventKind,
    opts: &SimOptions,
) -> Result<()> {
    match kind {
        EventKind::ConnectLine { a, b } => {
            if grid.lines().iter().any(|l| l.joins(*a, *b)) {
                return Err(Error::Parse(format!("line {a}-{b} is already closed")));
            }
            let decl = scenario
                .lines
                .iter()
                .find(|d| d.line.joins(*a, *b))
                .ok_or_else(|| Error::Parse(format!("no declared line joins {a} and {b}")))?;
            grid.connect_line(decl.line.clone())
        }
        EventKind::EnableSecondary { dgus } => {
            let newly = grid.enable_secondary(dgus, &scenario.comm)?;
            for idx in newly {
                state.delta_v[idx] = 0.0;
            }
            Ok(())
        }
        EventKind::PlugIn { dgu } => {
            let event = pnp::PlugEvent::from_declarations(*dgu, grid, scenario, state.t)?;
            pnp::plug_in(grid, state, &event)
        }
        EventKind::Unplug { dgu } => pnp::unplug(grid, state, *dgu, !opts.raw_removal),
        EventKind::LoadStep { dgu, new_load } => grid.set_load(*dgu, *new_load),
    }
}

fn record_row(
    trace: &mut Trace,
    grid: &Microgrid,
    state: &SimState,
    columns: &[crate::graph::DguId],
) -> Result<()> {
    let v_ref = grid.v_ref_vec();
    let voltages = state.voltages(&v_ref);
    let outputs = compute_outputs(
        &voltages,
        &grid.i_load_vec(),
        &grid.electrical()?,
        &grid.scaling()?,
    )?;
    let metric_idx = grid.metric_indices();
    let metrics = Metrics::compute(
        &metric_idx
            .iter()
            .map(|&i| outputs.i_pu[i])
            .collect::<Vec<_>>(),
        &metric_idx.iter().map(|&i| voltages[i]).collect::<Vec<_>>(),
        grid.v_ref(),
    );
    let v_avg = metric_idx.iter().map(|&i| voltages[i]).sum::<f64>() / metric_idx.len() as f64;

    let c = columns.len();
    let mut row = TraceRow {
        t: state.t,
        v: vec![f64::NAN; c],
        i_t: vec![f64::NAN; c],
        i_pu: vec![f64::NAN; c],
        v_avg,
        cs_error: metrics.cs_error,
        vb_error: metrics.vb_error,
    };
    for (grid_idx, dgu) in grid.dgus().iter().enumerate() {
        if let Some(col) = columns.iter().position(|&id| id == dgu.id) {
            row.v[col] = voltages[grid_idx];
            row.i_t[col] = outputs.i_t[grid_idx];
            row.i_pu[col] = outputs.i_pu[grid_idx];
        }
    }
    trace.rows.push(row);
    Ok(())
}
