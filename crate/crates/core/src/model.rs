//! Assembled closed-loop models and the mutable grid they are derived from.
//!
//! [`CoupledModel`] freezes one structural configuration into the matrices
//! the analysis and integrators consume. [`Microgrid`] is the live object a
//! scenario run mutates: DGUs join and leave, lines close, the secondary
//! layer switches on. Matrices are rebuilt from scratch after each
//! structural event; at the sizes of interest correctness beats reuse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{
    check_connectivity, CommEdge, CommNetwork, DguId, ElectricalNetwork, LaplacianPair, Line,
};
use crate::spectral::{analyze_q, build_q, AssumptionStatus, ScalingMatrix, SpectralReport};

/// Physical and control parameters of one DGU.
#[derive(Debug, Clone, PartialEq)]
pub struct DguSpec {
    pub id: DguId,
    /// Rated output current in ampere.
    pub rated_current: f64,
    /// Current scaling factor `I^s` in ampere; per-unit output is
    /// `I_t / I^s`. Usually equal to the rated current.
    pub scaling_factor: f64,
    /// Local voltage reference in volt. All DGUs of one grid must agree.
    pub v_ref: f64,
    /// Local load current in ampere, treated as a constant disturbance
    /// between events.
    pub load_current: f64,
}

impl DguSpec {
    fn validate(&self) -> Result<()> {
        if !(self.rated_current > 0.0) || !(self.scaling_factor > 0.0) {
            return Err(Error::MalformedGraph(format!(
                "DGU {} must have positive rated current and scaling factor",
                self.id
            )));
        }
        if !self.v_ref.is_finite() || !self.load_current.is_finite() {
            return Err(Error::MalformedGraph(format!(
                "DGU {} has non-finite reference or load",
                self.id
            )));
        }
        Ok(())
    }
}

/// Abstraction of the primary voltage loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimaryMode {
    /// `V = V_ref + dV` instantaneously.
    UnitGain,
    /// First-order lag of bandwidth `omega_c` (rad/s) between the corrected
    /// reference and the PCC voltage.
    FirstOrder { omega_c: f64 },
}

impl PrimaryMode {
    pub fn omega_c(&self) -> Option<f64> {
        match self {
            PrimaryMode::UnitGain => None,
            PrimaryMode::FirstOrder { omega_c } => Some(*omega_c),
        }
    }
}

/// How the grid guarantees a stable spectrum for `Q`, which also decides
/// where consensus coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// Unit scaling factors; communication topology and coefficients are
    /// free and provided explicitly.
    DIdentity,
    /// Communication mirrors the electrical topology with
    /// `a_ij = mu / R_ij`, so the Laplacians are proportional and the
    /// product commutes. Explicit coefficients are rejected.
    Commuting { mu: f64 },
}

/// One frozen closed-loop configuration: graphs, scaling, primary-loop
/// abstraction, and the cached matrices `M`, `L`, and `Q = L D M`.
#[derive(Debug, Clone)]
pub struct CoupledModel {
    el: ElectricalNetwork,
    comm: CommNetwork,
    scaling: ScalingMatrix,
    mode: PrimaryMode,
    m_mat: DMatrix<f64>,
    l_mat: DMatrix<f64>,
    q_mat: DMatrix<f64>,
}

impl CoupledModel {
    pub fn assemble(
        el: ElectricalNetwork,
        comm: CommNetwork,
        scaling: ScalingMatrix,
        mode: PrimaryMode,
    ) -> Result<Self> {
        if scaling.len() != el.node_count() {
            return Err(Error::Dimension(format!(
                "scaling matrix has {} entries for {} nodes",
                scaling.len(),
                el.node_count()
            )));
        }
        if let Some(omega_c) = mode.omega_c() {
            if !(omega_c > 0.0) {
                return Err(Error::MalformedGraph(format!(
                    "primary bandwidth must be positive, got {omega_c}"
                )));
            }
        }
        let pair = LaplacianPair::from_networks(&el, &comm)?;
        let q_mat = build_q(&pair.l_mat, &scaling, &pair.m_mat)?;
        Ok(Self {
            el,
            comm,
            scaling,
            mode,
            m_mat: pair.m_mat,
            l_mat: pair.l_mat,
            q_mat,
        })
    }

    pub fn n(&self) -> usize {
        self.el.node_count()
    }

    pub fn electrical(&self) -> &ElectricalNetwork {
        &self.el
    }

    pub fn comm(&self) -> &CommNetwork {
        &self.comm
    }

    pub fn scaling(&self) -> &ScalingMatrix {
        &self.scaling
    }

    pub fn mode(&self) -> PrimaryMode {
        self.mode
    }

    /// Electrical Laplacian `M`.
    pub fn m_mat(&self) -> &DMatrix<f64> {
        &self.m_mat
    }

    /// Gain-scaled communication Laplacian `L`.
    pub fn l_mat(&self) -> &DMatrix<f64> {
        &self.l_mat
    }

    /// The product `Q = L D M` governing the voltage-correction dynamics.
    pub fn q_mat(&self) -> &DMatrix<f64> {
        &self.q_mat
    }

    /// `L D v`, the drive term applied to load currents.
    pub fn l_d(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.l_mat * self.scaling.scale(v)
    }

    pub fn analyze(&self) -> Result<SpectralReport> {
        analyze_q(&self.q_mat, &self.scaling, &self.l_mat, &self.m_mat)
    }
}

/// The live grid of a scenario run: present DGUs in insertion order, closed
/// lines, active communication links, and per-DGU secondary flags.
#[derive(Debug, Clone)]
pub struct Microgrid {
    dgus: Vec<DguSpec>,
    lines: Vec<Line>,
    comm_edges: Vec<CommEdge>,
    secondary: Vec<bool>,
    k_i: f64,
    regime: Regime,
    mode: PrimaryMode,
    v_ref: f64,
}

impl Microgrid {
    pub fn new(initial: Vec<DguSpec>, k_i: f64, regime: Regime, mode: PrimaryMode) -> Result<Self> {
        if initial.is_empty() {
            return Err(Error::MalformedGraph(
                "a grid needs at least one DGU".into(),
            ));
        }
        if !(k_i > 0.0) {
            return Err(Error::MalformedGraph(format!(
                "consensus gain must be positive, got {k_i}"
            )));
        }
        if let Regime::Commuting { mu } = regime {
            if !(mu > 0.0) {
                return Err(Error::MalformedGraph(format!(
                    "proportionality constant must be positive, got {mu}"
                )));
            }
        }
        let v_ref = initial[0].v_ref;
        let mut grid = Self {
            dgus: Vec::new(),
            lines: Vec::new(),
            comm_edges: Vec::new(),
            secondary: Vec::new(),
            k_i,
            regime,
            mode,
            v_ref,
        };
        for spec in initial {
            grid.insert_dgu(spec)?;
        }
        Ok(grid)
    }

    pub fn n(&self) -> usize {
        self.dgus.len()
    }

    pub fn dgus(&self) -> &[DguSpec] {
        &self.dgus
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn comm_edges(&self) -> &[CommEdge] {
        &self.comm_edges
    }

    pub fn k_i(&self) -> f64 {
        self.k_i
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn mode(&self) -> PrimaryMode {
        self.mode
    }

    pub fn v_ref(&self) -> f64 {
        self.v_ref
    }

    pub fn ids(&self) -> Vec<DguId> {
        self.dgus.iter().map(|d| d.id).collect()
    }

    pub fn index_of(&self, id: DguId) -> Option<usize> {
        self.dgus.iter().position(|d| d.id == id)
    }

    pub fn is_present(&self, id: DguId) -> bool {
        self.index_of(id).is_some()
    }

    pub fn is_secondary_enabled(&self, id: DguId) -> bool {
        self.index_of(id)
            .map(|i| self.secondary[i])
            .unwrap_or(false)
    }

    pub fn any_secondary(&self) -> bool {
        self.secondary.iter().any(|&s| s)
    }

    pub fn enabled_ids(&self) -> Vec<DguId> {
        self.dgus
            .iter()
            .zip(&self.secondary)
            .filter_map(|(d, &s)| s.then_some(d.id))
            .collect()
    }

    /// Indices over which sharing and balancing metrics are computed: the
    /// secondary-enabled set, or every present DGU while the layer is off.
    pub fn metric_indices(&self) -> Vec<usize> {
        if self.any_secondary() {
            (0..self.n()).filter(|&i| self.secondary[i]).collect()
        } else {
            (0..self.n()).collect()
        }
    }

    /// Append a DGU. Fails on duplicate ids, invalid parameters, or a
    /// reference voltage different from the grid's common one.
    pub(crate) fn insert_dgu(&mut self, spec: DguSpec) -> Result<usize> {
        spec.validate()?;
        if self.index_of(spec.id).is_some() {
            return Err(Error::MalformedGraph(format!(
                "DGU {} already present",
                spec.id
            )));
        }
        if (spec.v_ref - self.v_ref).abs() > 1e-9 * self.v_ref.abs().max(1.0) {
            return Err(Error::ReferenceMismatch(format!(
                "DGU {} joins with reference {} V but the grid uses {} V",
                spec.id, spec.v_ref, self.v_ref
            )));
        }
        self.dgus.push(spec);
        self.secondary.push(false);
        Ok(self.dgus.len() - 1)
    }

    /// Remove a DGU together with its lines and communication links.
    pub(crate) fn remove_dgu(&mut self, id: DguId) -> Result<usize> {
        let idx = self
            .index_of(id)
            .ok_or_else(|| Error::MalformedGraph(format!("DGU {id} is not present")))?;
        self.dgus.remove(idx);
        self.secondary.remove(idx);
        self.lines.retain(|l| !l.touches(id));
        self.comm_edges.retain(|e| e.a != id && e.b != id);
        Ok(idx)
    }

    pub fn connect_line(&mut self, line: Line) -> Result<()> {
        if !self.is_present(line.from) || !self.is_present(line.to) {
            return Err(Error::MalformedGraph(format!(
                "line {}->{} references an absent DGU",
                line.from, line.to
            )));
        }
        if line.from == line.to || !(line.resistance > 0.0) {
            return Err(Error::MalformedGraph(format!(
                "invalid line {}->{} (R = {})",
                line.from, line.to, line.resistance
            )));
        }
        self.lines.push(line);
        if self.any_secondary() {
            self.refresh_derived_comm();
        }
        Ok(())
    }

    pub fn set_load(&mut self, id: DguId, load: f64) -> Result<()> {
        if !load.is_finite() {
            return Err(Error::MalformedGraph(format!(
                "non-finite load for DGU {id}"
            )));
        }
        let idx = self
            .index_of(id)
            .ok_or_else(|| Error::MalformedGraph(format!("DGU {id} is not present")))?;
        self.dgus[idx].load_current = load;
        Ok(())
    }

    /// Turn the secondary layer on for `ids` and install communication
    /// links. Under the commuting regime links are derived from the closed
    /// lines; under unit scaling they come from the declared coefficient
    /// table, filtered to enabled pairs. Returns the indices that were newly
    /// enabled so the caller can zero their corrections.
    pub fn enable_secondary(
        &mut self,
        ids: &[DguId],
        declared_comm: &[CommEdge],
    ) -> Result<Vec<usize>> {
        let mut newly = Vec::new();
        for id in ids {
            let idx = self
                .index_of(*id)
                .ok_or_else(|| Error::MalformedGraph(format!("DGU {id} is not present")))?;
            if !self.secondary[idx] {
                self.secondary[idx] = true;
                newly.push(idx);
            }
        }
        match self.regime {
            Regime::Commuting { .. } => self.refresh_derived_comm(),
            Regime::DIdentity => {
                self.comm_edges = declared_comm
                    .iter()
                    .filter(|e| self.is_secondary_enabled(e.a) && self.is_secondary_enabled(e.b))
                    .cloned()
                    .collect();
            }
        }
        Ok(newly)
    }

    pub(crate) fn set_secondary_flag(&mut self, idx: usize, enabled: bool) {
        self.secondary[idx] = enabled;
    }

    /// Recompute the derived communication links `a_ij = mu / R_ij` over the
    /// closed lines whose endpoints both run the secondary layer. Parallel
    /// lines merge so the proportionality to the electrical Laplacian is
    /// exact. No-op outside the commuting regime.
    pub(crate) fn refresh_derived_comm(&mut self) {
        let Regime::Commuting { mu } = self.regime else {
            return;
        };
        let mut merged: Vec<CommEdge> = Vec::new();
        for line in &self.lines {
            if !self.is_secondary_enabled(line.from) || !self.is_secondary_enabled(line.to) {
                continue;
            }
            let (a, b) = (line.from.min(line.to), line.from.max(line.to));
            let coeff = mu * line.conductance();
            match merged.iter_mut().find(|e| e.a == a && e.b == b) {
                Some(e) => e.coefficient += coeff,
                None => merged.push(CommEdge {
                    a,
                    b,
                    coefficient: coeff,
                }),
            }
        }
        self.comm_edges = merged;
    }

    /// Append explicit communication links for a newly plugged DGU (unit
    /// scaling regime only).
    pub(crate) fn add_comm_edges(&mut self, edges: &[CommEdge]) -> Result<()> {
        for e in edges {
            if !self.is_secondary_enabled(e.a) || !self.is_secondary_enabled(e.b) {
                return Err(Error::MalformedGraph(format!(
                    "communication edge {}-{} references a DGU without an active secondary layer",
                    e.a, e.b
                )));
            }
            if !(e.coefficient > 0.0) {
                return Err(Error::MalformedGraph(format!(
                    "communication edge {}-{} has nonpositive coefficient",
                    e.a, e.b
                )));
            }
            self.comm_edges.push(e.clone());
        }
        Ok(())
    }

    pub fn electrical(&self) -> Result<ElectricalNetwork> {
        ElectricalNetwork::new(self.ids(), self.lines.clone())
    }

    /// Communication network over all present DGUs; nodes without an active
    /// secondary layer are isolated in it.
    pub fn comm_over_present(&self) -> Result<CommNetwork> {
        CommNetwork::new(self.ids(), self.comm_edges.clone(), self.k_i)
    }

    /// Communication network restricted to the secondary-enabled DGUs.
    pub fn comm_over_enabled(&self) -> Result<CommNetwork> {
        CommNetwork::new(self.enabled_ids(), self.comm_edges.clone(), self.k_i)
    }

    pub fn scaling(&self) -> Result<ScalingMatrix> {
        ScalingMatrix::from_scaling_factors(
            &self
                .dgus
                .iter()
                .map(|d| d.scaling_factor)
                .collect::<Vec<_>>(),
        )
    }

    pub fn i_load_vec(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.dgus.iter().map(|d| d.load_current))
    }

    pub fn v_ref_vec(&self) -> DVector<f64> {
        DVector::from_element(self.n(), self.v_ref)
    }

    pub fn coupled_model(&self) -> Result<CoupledModel> {
        CoupledModel::assemble(
            self.electrical()?,
            self.comm_over_present()?,
            self.scaling()?,
            self.mode,
        )
    }

    /// Assemble the model and, whenever the secondary layer is active, gate
    /// it behind the closed-loop requirements: connected graphs and a
    /// product whose certified structure supports the stability results.
    pub fn validate_for_simulation(&self) -> Result<(CoupledModel, Option<SpectralReport>)> {
        let model = self.coupled_model()?;
        if !self.any_secondary() {
            return Ok((model, None));
        }
        let verdict = check_connectivity(model.electrical(), &self.comm_over_enabled()?);
        if !verdict.electrical_connected {
            return Err(Error::Connectivity(
                "electrical graph is not weakly connected while the secondary layer is active"
                    .into(),
            ));
        }
        if !verdict.comm_connected {
            return Err(Error::Connectivity(
                "communication graph over the secondary-enabled DGUs is not connected".into(),
            ));
        }
        let report = model.analyze()?;
        if report.assumption_status == AssumptionStatus::Neither {
            return Err(Error::Regime(
                "neither stability condition holds: scaling is not the identity and the \
                 Laplacian product does not commute"
                    .into(),
            ));
        }
        if !report.is_consistent() {
            return Err(Error::Regime(format!(
                "product spectrum violates its certified structure: {}",
                report.violations.join("; ")
            )));
        }
        Ok((model, Some(report)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: u32, scaling: f64, load: f64) -> DguSpec {
        DguSpec {
            id: DguId(id),
            rated_current: scaling,
            scaling_factor: scaling,
            v_ref: 48.0,
            load_current: load,
        }
    }

    fn line(from: u32, to: u32, r: f64) -> Line {
        Line {
            from: DguId(from),
            to: DguId(to),
            resistance: r,
            inductance: 0.0,
        }
    }

    fn two_node_grid() -> Microgrid {
        let mut grid = Microgrid::new(
            vec![spec(1, 1.0, 2.0), spec(2, 1.0, 4.0)],
            1.0,
            Regime::Commuting { mu: 1.0 },
            PrimaryMode::UnitGain,
        )
        .unwrap();
        grid.connect_line(line(1, 2, 0.1)).unwrap();
        grid
    }

    #[test]
    fn mismatched_reference_is_rejected() {
        let mut dgus = vec![spec(1, 1.0, 2.0)];
        dgus.push(DguSpec {
            v_ref: 47.0,
            ..spec(2, 1.0, 4.0)
        });
        let err = Microgrid::new(dgus, 1.0, Regime::DIdentity, PrimaryMode::UnitGain).unwrap_err();
        assert!(matches!(err, Error::ReferenceMismatch(_)));
    }

    #[test]
    fn derived_comm_tracks_enabled_lines() {
        let mut grid = two_node_grid();
        assert!(grid.comm_edges().is_empty());
        grid.enable_secondary(&[DguId(1), DguId(2)], &[]).unwrap();
        assert_eq!(grid.comm_edges().len(), 1);
        assert_eq!(grid.comm_edges()[0].coefficient, 10.0);
    }

    #[test]
    fn validation_passes_for_enabled_connected_grid() {
        let mut grid = two_node_grid();
        grid.enable_secondary(&[DguId(1), DguId(2)], &[]).unwrap();
        let (model, report) = grid.validate_for_simulation().unwrap();
        assert_eq!(model.n(), 2);
        let report = report.unwrap();
        assert_ne!(report.assumption_status, AssumptionStatus::Neither);
        assert!(report.is_consistent());
    }

    #[test]
    fn validation_skips_gate_while_secondary_is_off() {
        let grid = two_node_grid();
        let (model, report) = grid.validate_for_simulation().unwrap();
        assert!(report.is_none());
        // Without communication the correction dynamics are frozen.
        assert_eq!(model.q_mat().amax(), 0.0);
    }

    #[test]
    fn validation_rejects_disconnected_electrical_graph() {
        let mut grid = Microgrid::new(
            vec![spec(1, 1.0, 2.0), spec(2, 1.0, 4.0), spec(3, 1.0, 1.0)],
            1.0,
            Regime::Commuting { mu: 1.0 },
            PrimaryMode::UnitGain,
        )
        .unwrap();
        grid.connect_line(line(1, 2, 0.1)).unwrap();
        grid.enable_secondary(&[DguId(1), DguId(2), DguId(3)], &[])
            .unwrap();
        let err = grid.validate_for_simulation().unwrap_err();
        assert!(matches!(err, Error::Connectivity(_)));
    }

    #[test]
    fn metric_set_follows_secondary_flags() {
        let mut grid = two_node_grid();
        assert_eq!(grid.metric_indices(), vec![0, 1]);
        grid.enable_secondary(&[DguId(2)], &[]).unwrap();
        assert_eq!(grid.metric_indices(), vec![1]);
    }
}
