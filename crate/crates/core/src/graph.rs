//! Electrical and communication graphs of a DC microgrid.
//!
//! Nodes are DGUs. Electrical edges are resistive power lines whose weights
//! are the line conductances; communication edges carry the consensus
//! coefficients `a_ij`. Both graphs produce weighted Laplacians through the
//! incidence-matrix construction, and both are stored with a fixed node
//! ordering so matrices are reproducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::zero_eig_tol;

/// Stable identifier of a DGU. Matrix rows/columns follow the order of the
/// `node_ids` list of the network, not the numeric value of the id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DguId(pub u32);

impl std::fmt::Display for DguId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A resistive power line. The `from -> to` orientation fixes the reference
/// direction for positive line current; it does not affect Laplacians.
/// Inductance is recorded for completeness but the quasi-stationary line
/// approximation never integrates it.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: DguId,
    pub to: DguId,
    /// Line resistance in ohm, strictly positive.
    pub resistance: f64,
    /// Line inductance in henry, informational only.
    pub inductance: f64,
}

impl Line {
    pub fn conductance(&self) -> f64 {
        1.0 / self.resistance
    }

    /// True if this line joins `a` and `b` in either orientation.
    pub fn joins(&self, a: DguId, b: DguId) -> bool {
        (self.from == a && self.to == b) || (self.from == b && self.to == a)
    }

    pub fn touches(&self, id: DguId) -> bool {
        self.from == id || self.to == id
    }
}

/// Weighted digraph of the power lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectricalNetwork {
    node_ids: Vec<DguId>,
    lines: Vec<Line>,
}

impl ElectricalNetwork {
    pub fn new(node_ids: Vec<DguId>, lines: Vec<Line>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for id in &node_ids {
            if !seen.insert(*id) {
                return Err(Error::MalformedGraph(format!("duplicate node id {id}")));
            }
        }
        for line in &lines {
            if line.from == line.to {
                return Err(Error::MalformedGraph(format!(
                    "line {}->{} is a self-loop",
                    line.from, line.to
                )));
            }
            if !seen.contains(&line.from) || !seen.contains(&line.to) {
                return Err(Error::MalformedGraph(format!(
                    "line {}->{} references an unknown node",
                    line.from, line.to
                )));
            }
            if !(line.resistance > 0.0) {
                return Err(Error::MalformedGraph(format!(
                    "line {}->{} has nonpositive resistance {}",
                    line.from, line.to, line.resistance
                )));
            }
        }
        Ok(Self { node_ids, lines })
    }

    pub fn node_ids(&self) -> &[DguId] {
        &self.node_ids
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn index_of(&self, id: DguId) -> Option<usize> {
        self.node_ids.iter().position(|&n| n == id)
    }

    /// Signed node-by-edge incidence matrix: column k carries +1 at the
    /// source node of line k and -1 at its target.
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.node_count(), self.line_count());
        for (k, line) in self.lines.iter().enumerate() {
            let i = self.index_of(line.from).expect("validated on construction");
            let j = self.index_of(line.to).expect("validated on construction");
            b[(i, k)] = 1.0;
            b[(j, k)] = -1.0;
        }
        b
    }

    /// Diagonal of line conductances, ordered like the incidence columns.
    pub fn conductances(&self) -> DVector<f64> {
        DVector::from_iterator(self.line_count(), self.lines.iter().map(Line::conductance))
    }

    /// Weighted Laplacian of the electrical graph.
    pub fn laplacian(&self) -> DMatrix<f64> {
        laplacian(&self.incidence_matrix(), &self.conductances())
            .expect("dimensions agree by construction")
    }

    /// Weak connectivity, i.e. connectivity of the undirected version.
    pub fn is_weakly_connected(&self) -> bool {
        connected(
            self.node_count(),
            self.lines
                .iter()
                .map(|l| (self.index_of(l.from).unwrap(), self.index_of(l.to).unwrap())),
        )
    }

    pub fn neighbors_of(&self, id: DguId) -> Vec<DguId> {
        let mut out = Vec::new();
        for line in &self.lines {
            if line.from == id {
                out.push(line.to);
            } else if line.to == id {
                out.push(line.from);
            }
        }
        out
    }
}

/// One bidirectional communication link with coefficient `a_ij > 0`.
/// Storage is undirected, which makes `a_ij = a_ji` hold by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CommEdge {
    pub a: DguId,
    pub b: DguId,
    pub coefficient: f64,
}

/// Communication graph of the consensus layer with its global gain `k_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommNetwork {
    node_ids: Vec<DguId>,
    edges: Vec<CommEdge>,
    gain: f64,
}

impl CommNetwork {
    pub fn new(node_ids: Vec<DguId>, edges: Vec<CommEdge>, gain: f64) -> Result<Self> {
        if !(gain > 0.0) {
            return Err(Error::MalformedGraph(format!(
                "consensus gain must be positive, got {gain}"
            )));
        }
        let mut ids = std::collections::HashSet::new();
        for id in &node_ids {
            if !ids.insert(*id) {
                return Err(Error::MalformedGraph(format!("duplicate node id {id}")));
            }
        }
        let mut pairs = std::collections::HashSet::new();
        for e in &edges {
            if e.a == e.b {
                return Err(Error::MalformedGraph(format!(
                    "communication edge {}-{} is a self-loop",
                    e.a, e.b
                )));
            }
            if !ids.contains(&e.a) || !ids.contains(&e.b) {
                return Err(Error::MalformedGraph(format!(
                    "communication edge {}-{} references an unknown node",
                    e.a, e.b
                )));
            }
            if !(e.coefficient > 0.0) {
                return Err(Error::MalformedGraph(format!(
                    "communication edge {}-{} has nonpositive coefficient {}",
                    e.a, e.b, e.coefficient
                )));
            }
            let key = (e.a.min(e.b), e.a.max(e.b));
            if !pairs.insert(key) {
                return Err(Error::MalformedGraph(format!(
                    "duplicate communication edge {}-{}",
                    e.a, e.b
                )));
            }
        }
        Ok(Self {
            node_ids,
            edges,
            gain,
        })
    }

    /// Communication graph mirroring the electrical topology with
    /// `a_ij = mu / R_ij`. Parallel lines merge into one coefficient, so the
    /// resulting Laplacian satisfies `L = k_I * mu * M` exactly.
    pub fn from_electrical(el: &ElectricalNetwork, mu: f64, gain: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::MalformedGraph(format!(
                "proportionality constant must be positive, got {mu}"
            )));
        }
        let mut merged: Vec<CommEdge> = Vec::new();
        for line in el.lines() {
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
        Self::new(el.node_ids().to_vec(), merged, gain)
    }

    pub fn node_ids(&self) -> &[DguId] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[CommEdge] {
        &self.edges
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn index_of(&self, id: DguId) -> Option<usize> {
        self.node_ids.iter().position(|&n| n == id)
    }

    pub fn neighbors_of(&self, id: DguId) -> Vec<DguId> {
        let mut out = Vec::new();
        for e in &self.edges {
            if e.a == id {
                out.push(e.b);
            } else if e.b == id {
                out.push(e.a);
            }
        }
        out
    }

    /// Gain-scaled Laplacian `k_I * L(G_c)`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.node_ids.len();
        let mut l = DMatrix::zeros(n, n);
        for e in &self.edges {
            let i = self.index_of(e.a).expect("validated on construction");
            let j = self.index_of(e.b).expect("validated on construction");
            let w = self.gain * e.coefficient;
            l[(i, i)] += w;
            l[(j, j)] += w;
            l[(i, j)] -= w;
            l[(j, i)] -= w;
        }
        l
    }

    pub fn is_connected(&self) -> bool {
        connected(
            self.node_ids.len(),
            self.edges
                .iter()
                .map(|e| (self.index_of(e.a).unwrap(), self.index_of(e.b).unwrap())),
        )
    }
}

/// Weighted Laplacian `B diag(w) B^T` from an incidence matrix and strictly
/// positive edge weights. The result is independent of edge orientations.
pub fn laplacian(incidence: &DMatrix<f64>, weights: &DVector<f64>) -> Result<DMatrix<f64>> {
    if incidence.ncols() != weights.len() {
        return Err(Error::Dimension(format!(
            "incidence has {} edges but {} weights were given",
            incidence.ncols(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::MalformedGraph(
            "edge weights must be strictly positive".into(),
        ));
    }
    let mut weighted = incidence.clone();
    for (k, mut col) in weighted.column_iter_mut().enumerate() {
        col *= weights[k];
    }
    Ok(&weighted * incidence.transpose())
}

/// Connectivity verdict for the pair of graphs required by the closed loop:
/// the electrical graph must be weakly connected and the communication graph
/// connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectivityVerdict {
    pub electrical_connected: bool,
    pub comm_connected: bool,
}

impl ConnectivityVerdict {
    pub fn pass(&self) -> bool {
        self.electrical_connected && self.comm_connected
    }
}

pub fn check_connectivity(el: &ElectricalNetwork, comm: &CommNetwork) -> ConnectivityVerdict {
    ConnectivityVerdict {
        electrical_connected: el.is_weakly_connected(),
        comm_connected: comm.is_connected(),
    }
}

/// Electrical and communication Laplacians of one microgrid, checked against
/// the structural invariants shared by all weighted Laplacians.
#[derive(Debug, Clone)]
pub struct LaplacianPair {
    pub m_mat: DMatrix<f64>,
    pub l_mat: DMatrix<f64>,
}

impl LaplacianPair {
    pub fn from_networks(el: &ElectricalNetwork, comm: &CommNetwork) -> Result<Self> {
        if el.node_ids() != comm.node_ids() {
            return Err(Error::Dimension(
                "electrical and communication graphs list different nodes".into(),
            ));
        }
        let pair = Self {
            m_mat: el.laplacian(),
            l_mat: comm.laplacian(),
        };
        pair.validate()?;
        Ok(pair)
    }

    fn validate(&self) -> Result<()> {
        for (name, a) in [("electrical", &self.m_mat), ("communication", &self.l_mat)] {
            let tol = zero_eig_tol(a);
            if (a - a.transpose()).abs().max() > tol {
                return Err(Error::MalformedGraph(format!(
                    "{name} Laplacian is not symmetric"
                )));
            }
            for i in 0..a.nrows() {
                if a.row(i).sum().abs() > tol {
                    return Err(Error::MalformedGraph(format!(
                        "{name} Laplacian row {i} does not sum to zero"
                    )));
                }
                for j in 0..a.ncols() {
                    if i != j && a[(i, j)] > tol {
                        return Err(Error::MalformedGraph(format!(
                            "{name} Laplacian has positive off-diagonal at ({i}, {j})"
                        )));
                    }
                }
            }
            if a.nrows() > 0 {
                let min_eig = a
                    .clone()
                    .symmetric_eigenvalues()
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                if min_eig < -tol {
                    return Err(Error::MalformedGraph(format!(
                        "{name} Laplacian has a negative eigenvalue {min_eig}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Union-find connectivity over `n` nodes and an undirected edge iterator.
/// `n == 0` and `n == 1` are vacuously connected.
fn connected(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    if n <= 1 {
        return true;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut components = n;
    for (a, b) in edges {
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components == 1
}
