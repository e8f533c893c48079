//! Plug-and-play changes to the secondary layer.
//!
//! Joining a DGU needs only local information: its lines, its coefficient
//! rule, and a zeroed correction state, which keeps the grid-wide average of
//! the corrections at zero. Removing one hands its correction to its
//! communication neighbors in equal shares before the row disappears, again
//! preserving the zero average that current sharing and voltage balancing
//! rest on. Both operations are transactional: on error the grid and state
//! are left untouched.

use crate::dynamics::SimState;
use crate::error::{Error, Result};
use crate::graph::{CommEdge, DguId, Line};
use crate::model::{DguSpec, Microgrid, PrimaryMode, Regime};
use crate::scenario::Scenario;

/// Absolute bound on the pre-unplug correction average.
const ZERO_MEAN_TOL: f64 = 1e-9;

/// Where a joining DGU's consensus coefficients come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CommJoin {
    /// Derived as `a_ij = mu / R_ij` over the electrical neighbors; the only
    /// source the commuting regime accepts.
    Derived,
    /// Explicit per-neighbor coefficients; the only source the unit-scaling
    /// regime accepts.
    Explicit(Vec<CommEdge>),
}

/// A structural event of the secondary layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PlugEvent {
    pub spec: DguSpec,
    /// New lines tying the DGU to present neighbors.
    pub lines: Vec<Line>,
    pub comm: CommJoin,
    pub timestamp: f64,
}

impl PlugEvent {
    /// Assemble a plug-in event for a declared-but-absent DGU from the
    /// scenario's line and coefficient tables.
    pub fn from_declarations(
        id: DguId,
        grid: &Microgrid,
        scenario: &Scenario,
        timestamp: f64,
    ) -> Result<Self> {
        if grid.is_present(id) {
            return Err(Error::Parse(format!(
                "DGU {id} is already part of the grid"
            )));
        }
        let decl = scenario
            .dgus
            .iter()
            .find(|d| d.spec.id == id)
            .ok_or_else(|| Error::Parse(format!("DGU {id} is not declared")))?;
        let lines: Vec<Line> = scenario
            .lines
            .iter()
            .filter(|l| l.line.touches(id) && grid.is_present(other_end(&l.line, id)))
            .map(|l| l.line.clone())
            .collect();
        let comm = match grid.regime() {
            Regime::Commuting { .. } => CommJoin::Derived,
            Regime::DIdentity => CommJoin::Explicit(
                scenario
                    .comm
                    .iter()
                    .filter(|e| {
                        (e.a == id && grid.is_secondary_enabled(e.b))
                            || (e.b == id && grid.is_secondary_enabled(e.a))
                    })
                    .cloned()
                    .collect(),
            ),
        };
        Ok(PlugEvent {
            spec: decl.spec.clone(),
            lines,
            comm,
            timestamp,
        })
    }
}

fn other_end(line: &Line, id: DguId) -> DguId {
    if line.from == id {
        line.to
    } else {
        line.from
    }
}

/// Add a DGU to the grid: append its row, close its lines, install its
/// consensus coefficients per the active regime, and start its correction at
/// zero (which preserves the grid-wide correction average). In first-order
/// mode the PCC voltage starts at the common reference.
pub fn plug_in(grid: &mut Microgrid, state: &mut SimState, event: &PlugEvent) -> Result<()> {
    let mut next = grid.clone();
    let mut next_state = state.clone();

    let idx = next.insert_dgu(event.spec.clone())?;
    for line in &event.lines {
        if !line.touches(event.spec.id) {
            return Err(Error::MalformedGraph(format!(
                "line {}->{} does not touch the joining DGU {}",
                line.from, line.to, event.spec.id
            )));
        }
        next.connect_line(line.clone())?;
    }

    match (next.regime(), &event.comm) {
        (Regime::Commuting { .. }, CommJoin::Derived) => {
            next.set_secondary_flag(idx, true);
            next.refresh_derived_comm();
        }
        (Regime::DIdentity, CommJoin::Explicit(edges)) => {
            next.set_secondary_flag(idx, true);
            next.add_comm_edges(edges)?;
        }
        (Regime::Commuting { .. }, CommJoin::Explicit(_)) => {
            return Err(Error::Regime(
                "the commuting regime derives coefficients from line conductances; explicit \
                 coefficients are rejected"
                    .into(),
            ));
        }
        (Regime::DIdentity, CommJoin::Derived) => {
            return Err(Error::Regime(
                "the unit-scaling regime requires explicit consensus coefficients".into(),
            ));
        }
    }

    next_state.delta_v = next_state.delta_v.clone().insert_row(idx, 0.0);
    if let Some(v) = next_state.v.take() {
        next_state.v = Some(v.insert_row(idx, next.v_ref()));
    } else if matches!(next.mode(), PrimaryMode::FirstOrder { .. }) {
        return Err(Error::Dimension(
            "first-order state is missing its voltage block".into(),
        ));
    }

    next.validate_for_simulation()?;
    *grid = next;
    *state = next_state;
    Ok(())
}

/// Remove a DGU. With `redistribute` set, its correction is handed to its
/// communication neighbors in equal shares first, which keeps the remaining
/// corrections at zero average; without it the row is simply dropped (the
/// raw-removal variant used to model an unmanaged disconnect).
pub fn unplug(
    grid: &mut Microgrid,
    state: &mut SimState,
    id: DguId,
    redistribute: bool,
) -> Result<()> {
    let mut next = grid.clone();
    let mut next_state = state.clone();

    let idx = next
        .index_of(id)
        .ok_or_else(|| Error::MalformedGraph(format!("DGU {id} is not present")))?;
    if next.n() == 1 {
        return Err(Error::MalformedGraph("cannot unplug the last DGU".into()));
    }

    if redistribute {
        let mean = next_state.delta_v.mean();
        if mean.abs() > ZERO_MEAN_TOL {
            return Err(Error::Regime(format!(
                "unplug redistribution requires a zero-average correction state, found {mean:.3e}"
            )));
        }
        let departing = next_state.delta_v[idx];
        let neighbors: Vec<usize> = next
            .comm_edges()
            .iter()
            .filter_map(|e| {
                if e.a == id {
                    next.index_of(e.b)
                } else if e.b == id {
                    next.index_of(e.a)
                } else {
                    None
                }
            })
            .collect();
        if neighbors.is_empty() {
            let scale = next_state.delta_v.amax().max(1.0);
            if departing.abs() > 1e-12 * scale {
                return Err(Error::MalformedGraph(format!(
                    "DGU {id} carries a correction of {departing:.3e} V but has no \
                     communication neighbors to absorb it"
                )));
            }
        } else {
            let share = departing / neighbors.len() as f64;
            for n_idx in neighbors {
                next_state.delta_v[n_idx] += share;
            }
        }
    }

    next.remove_dgu(id)?;
    next.refresh_derived_comm();
    next_state.delta_v = next_state.delta_v.clone().remove_row(idx);
    if let Some(v) = next_state.v.take() {
        next_state.v = Some(v.remove_row(idx));
    }

    if next.any_secondary() {
        next.validate_for_simulation()?;
    }
    *grid = next;
    *state = next_state;
    Ok(())
}
