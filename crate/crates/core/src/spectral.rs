//! Eigenstructure of the coupled-Laplacian product `Q = L D M`.
//!
//! `Q` is not a Laplacian itself: it can lose symmetry and, when neither
//! stability condition holds (unit scaling, or a commuting product), it can
//! pick up complex and negative eigenvalues. This module certifies which
//! situation a given product is in, decomposes vectors into their zero-mean
//! part and its orthogonal complement, and builds the change of basis that
//! block-diagonalizes `Q` along those invariant subspaces.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::{inf_norm, zero_eig_tol};

/// Relative Frobenius tolerance for the commuting-product check.
const COMMUTE_REL_TOL: f64 = 1e-9;
/// Imaginary parts below `1e-8 * (1 + |lambda|)` are coerced to zero.
const IM_COERCE_REL_TOL: f64 = 1e-8;
/// Eigenvalues within `1e-6 * max(1, |lambda|)` form one multiplicity cluster.
const CLUSTER_REL_TOL: f64 = 1e-6;
/// Singular values below `1e-10 * sigma_max` count as zero in rank decisions.
const RANK_REL_TOL: f64 = 1e-10;

/// Diagonal current-scaling matrix with entries `d_i = 1 / I_i^s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingMatrix {
    entries: DVector<f64>,
}

impl ScalingMatrix {
    /// Build from the per-DGU scaling factors `I_i^s` (amperes).
    pub fn from_scaling_factors(scaling: &[f64]) -> Result<Self> {
        if scaling.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::MalformedGraph(
                "current scaling factors must be strictly positive".into(),
            ));
        }
        Self::from_entries(scaling.iter().map(|s| 1.0 / s).collect())
    }

    /// Build directly from the diagonal entries `d_i` (1/ampere).
    pub fn from_entries(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Dimension(
                "scaling matrix must have at least one entry".into(),
            ));
        }
        if entries.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::MalformedGraph(
                "scaling matrix entries must be strictly positive".into(),
            ));
        }
        Ok(Self {
            entries: DVector::from_vec(entries),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DVector::from_element(n, 1.0),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &DVector<f64> {
        &self.entries
    }

    pub fn as_diagonal(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.entries)
    }

    /// Elementwise product `D v`.
    pub fn scale(&self, v: &DVector<f64>) -> DVector<f64> {
        self.entries.component_mul(v)
    }

    pub fn is_identity(&self) -> bool {
        self.entries.iter().all(|d| (d - 1.0).abs() <= 1e-12)
    }
}

/// Which of the two sufficient stability conditions the product satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumptionStatus {
    /// `D = I`.
    DIdentity,
    /// `D > 0` and `L D M = M D L`.
    Commuting,
    /// Neither condition holds; the spectrum may be complex or negative.
    Neither,
}

impl std::fmt::Display for AssumptionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AssumptionStatus::DIdentity => "d_identity",
            AssumptionStatus::Commuting => "commuting",
            AssumptionStatus::Neither => "neither",
        };
        f.write_str(s)
    }
}

/// Eigenvalue sign counts (positive, negative, zero), taken over the
/// eigenvalues that are real after imaginary-part coercion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// Certified eigenstructure of one product `Q = L D M`.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Eigenvalues of `Q`, sorted by real then imaginary part.
    pub eigenvalues: Vec<Complex<f64>>,
    /// `||Q 1||`, the right-kernel certificate.
    pub kernel_residual: f64,
    /// `||1^T Q||`, the left-kernel (range) certificate.
    pub range_residual: f64,
    pub inertia: Inertia,
    /// Verdict of the multiplicity comparison; see `diag_margin` for how
    /// decisive the underlying rank calls were.
    pub diagonalizable: bool,
    /// Smallest ratio between the last singular value kept as nonzero and the
    /// largest one dropped as zero across all repeated-eigenvalue clusters.
    /// Infinite when the spectrum is simple.
    pub diag_margin: f64,
    pub assumption_status: AssumptionStatus,
    /// Magnitude below which an eigenvalue counted as zero in this analysis.
    pub zero_tolerance: f64,
    /// Smallest eigenvalue strictly above the zero tolerance, if any.
    pub smallest_positive_eig: Option<f64>,
    /// Structural guarantees that failed even though the status promised
    /// them. Empty for a consistent report and always empty under `Neither`.
    pub violations: Vec<String>,
    /// Decay rate of the unit-gain loop, attached by the equilibrium layer.
    pub rate_unit_gain: Option<f64>,
    /// Decay rate of the first-order loop, attached by the equilibrium layer.
    pub rate_first_order: Option<f64>,
}

impl SpectralReport {
    /// Eigenvalues whose imaginary part survived coercion, i.e. the genuinely
    /// complex part of the spectrum.
    pub fn complex_eigenvalues(&self) -> Vec<Complex<f64>> {
        self.eigenvalues
            .iter()
            .filter(|z| !is_coercible(**z))
            .cloned()
            .collect()
    }

    /// Real parts of the eigenvalues that are real after coercion.
    pub fn real_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .filter(|z| is_coercible(**z))
            .map(|z| z.re)
            .collect()
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Number of eigenvalues inside the zero tolerance used by the analysis.
    pub fn zero_eigenvalue_count(&self) -> usize {
        self.inertia.zero
    }

    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }

    /// Multi-line human-readable rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("assumption status : {}\n", self.assumption_status));
        out.push_str(&format!(
            "inertia (+,-,0)   : ({}, {}, {})\n",
            self.inertia.positive, self.inertia.negative, self.inertia.zero
        ));
        out.push_str(&format!(
            "kernel residual   : {:.3e}\n",
            self.kernel_residual
        ));
        out.push_str(&format!(
            "range residual    : {:.3e}\n",
            self.range_residual
        ));
        out.push_str(&format!(
            "diagonalizable    : {} (margin {:.3e})\n",
            self.diagonalizable, self.diag_margin
        ));
        match self.smallest_positive_eig {
            Some(x) => out.push_str(&format!("smallest pos eig  : {x:.6e}\n")),
            None => out.push_str("smallest pos eig  : absent\n"),
        }
        if let Some(r) = self.rate_unit_gain {
            out.push_str(&format!("rate (unit gain)  : {r:.6e}\n"));
        }
        if let Some(r) = self.rate_first_order {
            out.push_str(&format!("rate (first order): {r:.6e}\n"));
        }
        out.push_str("eigenvalues:\n");
        for z in &self.eigenvalues {
            out.push_str(&format!("  {:.6e} {:+.6e}i\n", z.re, z.im));
        }
        if !self.violations.is_empty() {
            out.push_str("violations:\n");
            for v in &self.violations {
                out.push_str(&format!("  {v}\n"));
            }
        }
        out
    }

    /// Machine-readable `key = value` document. Keys are documented in the
    /// repository docs and stay stable.
    pub fn to_key_values(&self) -> String {
        let eigs: Vec<String> = self
            .eigenvalues
            .iter()
            .map(|z| format!("{}{:+}i", z.re, z.im))
            .collect();
        let mut out = String::new();
        out.push_str(&format!("eigenvalues = {}\n", eigs.join(", ")));
        out.push_str(&format!(
            "inertia = {},{},{}\n",
            self.inertia.positive, self.inertia.negative, self.inertia.zero
        ));
        out.push_str(&format!("assumption_status = {}\n", self.assumption_status));
        match self.smallest_positive_eig {
            Some(x) => out.push_str(&format!("smallest_positive_eig = {x}\n")),
            None => out.push_str("smallest_positive_eig = absent\n"),
        }
        out.push_str(&format!("kernel_residual = {}\n", self.kernel_residual));
        out.push_str(&format!("range_residual = {}\n", self.range_residual));
        out.push_str(&format!("diagonalizable = {}\n", self.diagonalizable));
        match self.rate_unit_gain {
            Some(r) => out.push_str(&format!("rate_unit_gain = {r}\n")),
            None => out.push_str("rate_unit_gain = unavailable\n"),
        }
        match self.rate_first_order {
            Some(r) => out.push_str(&format!("rate_first_order = {r}\n")),
            None => out.push_str("rate_first_order = unavailable\n"),
        }
        out.push_str(&format!("violations = {}\n", self.violations.join("; ")));
        out
    }
}

/// Split `v` into its zero-mean component and the constant component, the
/// unique decomposition along `H^1` and its orthogonal complement.
pub fn project_h1(v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    if v.is_empty() {
        return Err(Error::Dimension("cannot project an empty vector".into()));
    }
    let mean = v.mean();
    let bar = DVector::from_element(v.len(), mean);
    let hat = v - &bar;
    Ok((hat, bar))
}

/// The product `L D M` in that exact order.
pub fn build_q(
    l_mat: &DMatrix<f64>,
    d: &ScalingMatrix,
    m_mat: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = d.len();
    if l_mat.nrows() != n || l_mat.ncols() != n || m_mat.nrows() != n || m_mat.ncols() != n {
        return Err(Error::Dimension(format!(
            "expected {n}x{n} Laplacians, got {}x{} and {}x{}",
            l_mat.nrows(),
            l_mat.ncols(),
            m_mat.nrows(),
            m_mat.ncols()
        )));
    }
    // L * diag(d) * M without materializing the diagonal.
    let mut dm = m_mat.clone();
    for (i, mut row) in dm.row_iter_mut().enumerate() {
        row *= d.entries()[i];
    }
    Ok(l_mat * dm)
}

fn is_coercible(z: Complex<f64>) -> bool {
    z.im.abs() <= IM_COERCE_REL_TOL * (1.0 + z.norm())
}

/// Eigenvalues of a real square matrix, sorted by (re, im).
pub(crate) fn eigenvalues_sorted(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut eigs: Vec<Complex<f64>> = a.complex_eigenvalues().iter().cloned().collect();
    eigs.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    eigs
}

/// Geometric multiplicity of `lambda` as an eigenvalue of `a`, together with
/// the rank-decision margin (smallest kept singular value over largest
/// dropped one).
fn geometric_multiplicity(a: &DMatrix<f64>, lambda: Complex<f64>) -> (usize, f64) {
    let n = a.nrows();
    let shifted = if is_coercible(lambda) {
        let mut s = a.clone();
        for i in 0..n {
            s[(i, i)] -= lambda.re;
        }
        s
    } else {
        // Real 2n x 2n embedding of the complex shift: the real kernel has
        // twice the complex dimension.
        let mut s = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] = a[(i, j)];
                s[(n + i, n + j)] = a[(i, j)];
            }
            s[(i, i)] -= lambda.re;
            s[(n + i, n + i)] -= lambda.re;
            s[(i, n + i)] = lambda.im;
            s[(n + i, i)] = -lambda.im;
        }
        s
    };
    let doubled = shifted.nrows() != n;
    let mut sv: Vec<f64> = shifted.singular_values().iter().cloned().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    let sigma_max = sv.first().cloned().unwrap_or(0.0);
    let eps = RANK_REL_TOL * sigma_max.max(f64::MIN_POSITIVE);
    let dropped = sv.iter().filter(|s| **s < eps).count();
    let kept_min = sv
        .iter()
        .filter(|s| **s >= eps)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let dropped_max = sv.iter().filter(|s| **s < eps).cloned().fold(0.0, f64::max);
    let margin = if dropped == 0 {
        kept_min / eps
    } else {
        kept_min / dropped_max.max(f64::MIN_POSITIVE)
    };
    let g = if doubled { dropped / 2 } else { dropped };
    (g, margin)
}

/// Full eigenstructure certification of `q = l_mat * D * m_mat`.
///
/// Violations of the structure promised by the detected assumption status are
/// recorded in the report instead of raised: the `Neither` regime exists
/// precisely because such products can have complex or negative eigenvalues.
pub fn analyze_q(
    q: &DMatrix<f64>,
    d: &ScalingMatrix,
    l_mat: &DMatrix<f64>,
    m_mat: &DMatrix<f64>,
) -> Result<SpectralReport> {
    let n = d.len();
    if q.nrows() != n || q.ncols() != n || l_mat.nrows() != n || m_mat.nrows() != n {
        return Err(Error::Dimension(
            "analyze_q inputs disagree in dimension".into(),
        ));
    }

    let ones = DVector::from_element(n, 1.0);
    let kernel_residual = (q * &ones).norm();
    let range_residual = (q.transpose() * &ones).norm();

    let assumption_status = if d.is_identity() {
        AssumptionStatus::DIdentity
    } else {
        let ldm = build_q(l_mat, d, m_mat)?;
        let mdl = build_q(m_mat, d, l_mat)?;
        let resid = (&ldm - &mdl).norm();
        if resid <= COMMUTE_REL_TOL * ldm.norm().max(1.0) {
            AssumptionStatus::Commuting
        } else {
            AssumptionStatus::Neither
        }
    };

    let eigenvalues = eigenvalues_sorted(q);
    let zero_tol = zero_eig_tol(q);

    let mut positive = 0;
    let mut negative = 0;
    let mut zero = 0;
    let mut smallest_positive = f64::INFINITY;
    for z in &eigenvalues {
        if !is_coercible(*z) {
            continue;
        }
        if z.re > zero_tol {
            positive += 1;
            smallest_positive = smallest_positive.min(z.re);
        } else if z.re < -zero_tol {
            negative += 1;
        } else {
            zero += 1;
        }
    }
    let inertia = Inertia {
        positive,
        negative,
        zero,
    };
    let smallest_positive_eig = if smallest_positive.is_finite() {
        Some(smallest_positive)
    } else {
        None
    };

    // Cluster the eigenvalues and compare algebraic against geometric
    // multiplicity; clusters of size one are trivially semisimple.
    let mut cluster_of: Vec<usize> = (0..eigenvalues.len()).collect();
    for i in 0..eigenvalues.len() {
        for j in (i + 1)..eigenvalues.len() {
            let (zi, zj) = (eigenvalues[i], eigenvalues[j]);
            let tol = CLUSTER_REL_TOL * zi.norm().max(zj.norm()).max(1.0);
            if (zi - zj).norm() <= tol {
                let (a, b) = (cluster_of[i], cluster_of[j]);
                let target = a.min(b);
                for c in cluster_of.iter_mut() {
                    if *c == a || *c == b {
                        *c = target;
                    }
                }
            }
        }
    }
    let mut diagonalizable = true;
    let mut diag_margin = f64::INFINITY;
    let mut done: Vec<usize> = Vec::new();
    for i in 0..eigenvalues.len() {
        let c = cluster_of[i];
        if done.contains(&c) {
            continue;
        }
        done.push(c);
        let members: Vec<usize> = (0..eigenvalues.len())
            .filter(|&k| cluster_of[k] == c)
            .collect();
        let alg = members.len();
        if alg < 2 {
            continue;
        }
        let centroid = members
            .iter()
            .map(|&k| eigenvalues[k])
            .sum::<Complex<f64>>()
            / Complex::new(alg as f64, 0.0);
        let (geo, margin) = geometric_multiplicity(q, centroid);
        diag_margin = diag_margin.min(margin);
        if geo < alg {
            diagonalizable = false;
        }
    }

    let mut violations = Vec::new();
    if assumption_status != AssumptionStatus::Neither {
        let neg_tol = 1e-8 * inf_norm(q).max(1.0);
        for z in &eigenvalues {
            if !is_coercible(*z) {
                violations.push(format!("complex eigenvalue {}{:+}i", z.re, z.im));
            } else if z.re < -neg_tol {
                violations.push(format!("negative eigenvalue {}", z.re));
            }
        }
        if inertia.zero != 1 {
            violations.push(format!(
                "zero eigenvalue multiplicity {} (expected exactly 1)",
                inertia.zero
            ));
        }
    }

    Ok(SpectralReport {
        eigenvalues,
        kernel_residual,
        range_residual,
        inertia,
        diagonalizable,
        diag_margin,
        assumption_status,
        zero_tolerance: zero_tol,
        smallest_positive_eig,
        violations,
        rate_unit_gain: None,
        rate_first_order: None,
    })
}

/// Change of basis `T = [b_1 | ... | b_{N-1} | 1]` whose first `N - 1`
/// columns are the difference basis `b_k = e_k - e_{k+1}` of the zero-mean
/// subspace. For any `Q` with `Q 1 = 0` and `1^T Q = 0`, the conjugation
/// `T^{-1} Q T` is block diagonal with a scalar zero in the last position.
pub fn invariant_subspace_transform(n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::Dimension(format!(
            "invariant-subspace transform needs at least 2 nodes, got {n}"
        )));
    }
    let mut t = DMatrix::zeros(n, n);
    for k in 0..n - 1 {
        t[(k, k)] = 1.0;
        t[(k + 1, k)] = -1.0;
    }
    for i in 0..n {
        t[(i, n - 1)] = 1.0;
    }
    Ok(t)
}

pub mod counterexample {
    //! A fixed nine-node pair of mismatched graphs whose product `L D M`
    //! falls outside both stability regimes and exhibits negative-real and
    //! complex eigenvalues. All inputs are stored to four decimals, so the
    //! reference spectrum is only reproducible to that precision.

    use super::*;

    const N: usize = 9;

    #[rustfmt::skip]
    const B1: [f64; 81] = [
        -1.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,
         0.0, -1.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,
         0.0,  0.0, -1.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,
         0.0,  0.0,  0.0, -1.0,  0.0,  0.0,  0.0,  0.0,  0.0,
         1.0,  1.0,  0.0,  0.0, -1.0,  0.0,  0.0,  0.0,  0.0,
         0.0,  0.0,  1.0,  0.0,  1.0, -1.0, -1.0,  0.0,  0.0,
         0.0,  0.0,  0.0,  0.0,  0.0,  1.0,  0.0,  1.0, -1.0,
         0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  1.0, -1.0,  0.0,
         0.0,  0.0,  0.0,  1.0,  0.0,  0.0,  0.0,  0.0,  1.0,
    ];

    #[rustfmt::skip]
    const B2: [f64; 90] = [
        -1.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,
         1.0, -1.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,
         0.0,  1.0, -1.0, -1.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,
         0.0,  0.0,  1.0,  0.0,  1.0, -1.0,  0.0,  0.0,  0.0,  0.0,
         0.0,  0.0,  0.0,  0.0, -1.0,  0.0,  1.0,  0.0,  0.0,  0.0,
         0.0,  0.0,  0.0,  0.0,  0.0,  1.0, -1.0, -1.0,  0.0,  0.0,
         0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  1.0, -1.0,  0.0,
         0.0,  0.0,  0.0,  1.0,  0.0,  0.0,  0.0,  0.0,  1.0,  1.0,
         0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0, -1.0,
    ];

    const W1: [f64; 9] = [
        0.8842, 0.8676, 0.9167, 0.8456, 0.2113, 0.0038, 0.4139, 0.1918, 0.9815,
    ];
    const W2: [f64; 10] = [
        0.6074, 0.9785, 0.8275, 0.3907, 0.4405, 0.2719, 0.1663, 0.8310, 0.3885, 0.8292,
    ];
    const D: [f64; 9] = [
        0.5977, 0.4297, 0.4937, 0.0058, 0.4643, 0.0005, 0.6299, 0.8209, 0.3597,
    ];

    /// The nine eigenvalues this construction is known to produce, as
    /// `(re, im)` pairs.
    pub const REFERENCE_EIGENVALUES: [(f64, f64); 9] = [
        (1.3891, 0.1564),
        (1.3891, -0.1564),
        (0.9210, 0.0),
        (0.5879, 0.0),
        (0.4509, 0.0),
        (0.1057, 0.0),
        (-0.0002, 0.0039),
        (-0.0002, -0.0039),
        (0.0, 0.0),
    ];

    /// Absolute tolerance for matching the reference spectrum; the inputs are
    /// only printed to four decimals.
    pub const REFERENCE_TOLERANCE: f64 = 2e-3;

    /// The assembled fixture with its spectral report.
    #[derive(Debug, Clone)]
    pub struct Counterexample {
        pub incidence_first: DMatrix<f64>,
        pub weights_first: DVector<f64>,
        pub incidence_second: DMatrix<f64>,
        pub weights_second: DVector<f64>,
        pub scaling: ScalingMatrix,
        pub l_mat: DMatrix<f64>,
        pub m_mat: DMatrix<f64>,
        pub q_mat: DMatrix<f64>,
        pub report: SpectralReport,
    }

    /// Recompute `L`, `M` and `Q` from the stored factors and analyze the
    /// result.
    pub fn counterexample() -> Counterexample {
        let b1 = DMatrix::from_row_slice(N, 9, &B1);
        let b2 = DMatrix::from_row_slice(N, 10, &B2);
        let w1 = DVector::from_row_slice(&W1);
        let w2 = DVector::from_row_slice(&W2);
        let scaling = ScalingMatrix::from_entries(D.to_vec()).expect("fixture entries positive");
        let l_mat = crate::graph::laplacian(&b1, &w1).expect("fixture dimensions agree");
        let m_mat = crate::graph::laplacian(&b2, &w2).expect("fixture dimensions agree");
        let q_mat = build_q(&l_mat, &scaling, &m_mat).expect("fixture dimensions agree");
        let report = analyze_q(&q_mat, &scaling, &l_mat, &m_mat).expect("dimensions agree");
        Counterexample {
            incidence_first: b1,
            weights_first: w1,
            incidence_second: b2,
            weights_second: w2,
            scaling,
            l_mat,
            m_mat,
            q_mat,
            report,
        }
    }

    /// Greedy one-to-one match of a computed spectrum against the reference
    /// list; returns the worst pairing distance.
    pub fn reference_mismatch(eigenvalues: &[Complex<f64>]) -> f64 {
        let mut pool: Vec<Complex<f64>> = eigenvalues.to_vec();
        let mut worst = f64::INFINITY;
        if pool.len() != REFERENCE_EIGENVALUES.len() {
            return worst;
        }
        worst = 0.0;
        for (re, im) in REFERENCE_EIGENVALUES {
            let target = Complex::new(re, im);
            let (idx, dist) = pool
                .iter()
                .enumerate()
                .map(|(i, z)| (i, (z - target).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("pool is nonempty");
            worst = worst.max(dist);
            pool.swap_remove(idx);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k2_laplacian(w: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[w, -w, -w, w])
    }

    #[test]
    fn project_splits_into_zero_mean_and_constant() {
        let v = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let (hat, bar) = project_h1(&v).unwrap();
        assert_eq!(hat, DVector::from_row_slice(&[-1.0, 0.0, 1.0]));
        assert_eq!(bar, DVector::from_element(3, 2.0));
    }

    #[test]
    fn project_of_constant_vector_has_no_zero_mean_part() {
        let v = DVector::from_element(4, 3.5);
        let (hat, bar) = project_h1(&v).unwrap();
        assert_eq!(hat, DVector::zeros(4));
        assert_eq!(bar, v);
    }

    #[test]
    fn project_of_zero_mean_vector_is_itself() {
        let v = DVector::from_row_slice(&[2.0, -1.0, -1.0]);
        let (hat, bar) = project_h1(&v).unwrap();
        assert_eq!(hat, v);
        assert_eq!(bar, DVector::zeros(3));
    }

    #[test]
    fn project_rejects_empty_vector() {
        assert!(matches!(
            project_h1(&DVector::zeros(0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn product_of_two_node_laplacians_is_squared_laplacian() {
        let m = k2_laplacian(1.0);
        let q = build_q(&m, &ScalingMatrix::identity(2), &m).unwrap();
        assert_eq!(q, DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]));
    }

    #[test]
    fn product_annihilates_the_ones_vector() {
        let fix = counterexample::counterexample();
        let ones = DVector::from_element(9, 1.0);
        assert!((fix.q_mat * ones).norm() < 1e-12);
    }

    #[test]
    fn build_q_rejects_dimension_mismatch() {
        let m = k2_laplacian(1.0);
        let err = build_q(&m, &ScalingMatrix::identity(3), &m).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn identity_scaling_yields_real_nonnegative_simple_zero() {
        // Different topologies on 3 nodes: path for one graph, triangle for
        // the other. D = I keeps the spectrum real and nonnegative.
        let path =
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.5, -1.5, 0.0, -1.5, 1.5]);
        let triangle =
            DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 3.0, -2.0, -1.0, -2.0, 3.0]);
        let d = ScalingMatrix::identity(3);
        let q = build_q(&path, &d, &triangle).unwrap();
        let report = analyze_q(&q, &d, &path, &triangle).unwrap();
        assert_eq!(report.assumption_status, AssumptionStatus::DIdentity);
        assert!(report.is_consistent(), "{:?}", report.violations);
        assert_eq!(report.inertia.zero, 1);
        assert_eq!(report.inertia.negative, 0);
        assert_eq!(report.inertia.positive, 2);
        assert!(report.diagonalizable);
    }

    #[test]
    fn proportional_laplacians_with_nonunit_scaling_commute() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[30.0, -20.0, -10.0, -20.0, 45.0, -25.0, -10.0, -25.0, 35.0],
        );
        let l = &m * 2.0;
        let d = ScalingMatrix::from_scaling_factors(&[10.0, 5.0, 3.33]).unwrap();
        let q = build_q(&l, &d, &m).unwrap();
        let report = analyze_q(&q, &d, &l, &m).unwrap();
        assert_eq!(report.assumption_status, AssumptionStatus::Commuting);
        assert!(report.is_consistent(), "{:?}", report.violations);
        assert!(report.smallest_positive_eig.unwrap() > 0.0);
    }

    #[test]
    fn repeated_eigenvalues_of_symmetric_star_are_semisimple() {
        // Unweighted star on 4 nodes: M has a doubly repeated eigenvalue, so
        // Q = M^2 exercises the multiplicity comparison.
        let mut m = DMatrix::zeros(4, 4);
        for leaf in 1..4 {
            m[(0, 0)] += 1.0;
            m[(leaf, leaf)] += 1.0;
            m[(0, leaf)] -= 1.0;
            m[(leaf, 0)] -= 1.0;
        }
        let d = ScalingMatrix::identity(4);
        let q = build_q(&m, &d, &m).unwrap();
        let report = analyze_q(&q, &d, &m, &m).unwrap();
        assert!(report.diagonalizable);
        assert!(report.diag_margin.is_finite());
        assert!(report.diag_margin > 1e3);
        assert_eq!(report.inertia.zero, 1);
    }

    #[test]
    fn counterexample_reproduces_reference_entries() {
        let fix = counterexample::counterexample();
        assert_relative_eq!(fix.l_mat[(4, 4)], 1.9631, epsilon = 5e-5);
        assert_relative_eq!(fix.m_mat[(1, 1)], 1.5859, epsilon = 5e-5);
        assert_relative_eq!(fix.q_mat[(0, 0)], 0.3210, epsilon = 5e-5);
    }

    #[test]
    fn counterexample_spectrum_matches_reference_list() {
        let fix = counterexample::counterexample();
        let worst = counterexample::reference_mismatch(&fix.report.eigenvalues);
        assert!(
            worst <= counterexample::REFERENCE_TOLERANCE,
            "worst eigenvalue mismatch {worst}"
        );
        assert_eq!(fix.report.assumption_status, AssumptionStatus::Neither);
        // The negative-real complex pair and the structural zero are present.
        let has_negative_pair = fix
            .report
            .complex_eigenvalues()
            .iter()
            .any(|z| z.re < 0.0 && (z.im.abs() - 0.0039).abs() < 2e-3);
        assert!(has_negative_pair);
        assert_eq!(fix.report.inertia.zero, 1);
    }

    #[test]
    fn transform_for_two_nodes_is_difference_and_ones() {
        let t = invariant_subspace_transform(2).unwrap();
        assert_eq!(t, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0]));
        assert!(invariant_subspace_transform(1).is_err());
    }

    #[test]
    fn transform_sends_constants_to_last_coordinate() {
        let n = 5;
        let t = invariant_subspace_transform(n).unwrap();
        let alpha = 2.75;
        let coords = t
            .clone()
            .lu()
            .solve(&DVector::from_element(n, alpha))
            .unwrap();
        for k in 0..n - 1 {
            assert!(coords[k].abs() < 1e-12);
        }
        assert_relative_eq!(coords[n - 1], alpha, epsilon = 1e-12);
    }

    #[test]
    fn transform_block_diagonalizes_the_counterexample_product() {
        let fix = counterexample::counterexample();
        let n = 9;
        let t = invariant_subspace_transform(n).unwrap();
        let conj = t.clone().lu().solve(&(&fix.q_mat * &t)).unwrap();
        for k in 0..n {
            assert!(conj[(n - 1, k)].abs() <= 1e-8, "last row entry {k}");
            assert!(conj[(k, n - 1)].abs() <= 1e-8, "last column entry {k}");
        }
        assert!(conj[(n - 1, n - 1)].abs() <= 1e-8);
    }

    #[test]
    fn scaling_matrix_rejects_nonpositive_factors() {
        assert!(ScalingMatrix::from_scaling_factors(&[1.0, 0.0]).is_err());
        assert!(ScalingMatrix::from_entries(vec![1.0, -2.0]).is_err());
        assert!(ScalingMatrix::from_entries(vec![]).is_err());
    }
}
