//! Steady states of the closed loop and theoretical convergence rates.
//!
//! Both primary-loop abstractions share the same steady-state equation
//! `Q dV* = -L D I_L* - Q V_ref*`: the first-order lag drops out of the
//! equilibrium entirely. The equation pins the zero-mean part of `dV*`
//! uniquely; the constant part is a free parameter `alpha` fixed by the
//! initial condition of the integrators.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::CoupledModel;
use crate::spectral::{invariant_subspace_transform, AssumptionStatus, SpectralReport};

/// Relative residual bound enforced on every equilibrium solve.
const RESIDUAL_REL_TOL: f64 = 1e-8;

/// One solved steady state.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    /// The unique zero-mean solution of the steady-state equation (V).
    pub delta_v_hat: DVector<f64>,
    /// Free constant component chosen by the caller (V).
    pub alpha: f64,
    /// Steady PCC voltages `dV* + alpha 1 + V_ref*` (V).
    pub v_star: DVector<f64>,
    /// Steady DGU output currents (A).
    pub i_t_star: DVector<f64>,
    /// Common per-unit current level `d_i I_ti*` (p.u.).
    pub shared_level: f64,
}

/// Solve `Q x = rhs` restricted to the zero-mean subspace by dropping the
/// last row and column in the invariant-subspace coordinates. The result is
/// an exactly zero-mean combination of the difference basis.
pub(crate) fn restricted_h1_solve(q: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = q.nrows();
    if n != rhs.len() {
        return Err(Error::Dimension("restricted solve inputs disagree".into()));
    }
    if n == 1 {
        return Ok(DVector::zeros(1));
    }
    let t = invariant_subspace_transform(n)?;
    let t_lu = t.clone().lu();
    let a = t_lu
        .solve(&(q * &t))
        .ok_or_else(|| Error::Numerical("invariant-subspace transform is singular".into()))?;
    let r = t_lu
        .solve(rhs)
        .ok_or_else(|| Error::Numerical("invariant-subspace transform is singular".into()))?;
    let block = a.view((0, 0), (n - 1, n - 1)).into_owned();
    let reduced = r.rows(0, n - 1).into_owned();
    let coords = block.lu().solve(&reduced).ok_or_else(|| {
        Error::Connectivity(
            "restricted steady-state system is singular; the graphs are likely disconnected".into(),
        )
    })?;
    let mut full = DVector::zeros(n);
    full.rows_mut(0, n - 1).copy_from(&coords);
    Ok(&t * full)
}

fn solve_common(
    model: &CoupledModel,
    i_load: &DVector<f64>,
    v_ref: &DVector<f64>,
    alpha: f64,
) -> Result<EquilibriumSolution> {
    let n = model.n();
    if i_load.len() != n || v_ref.len() != n {
        return Err(Error::Dimension(format!(
            "expected {n}-dimensional inputs, got {} and {}",
            i_load.len(),
            v_ref.len()
        )));
    }
    let q = model.q_mat();
    let rhs = -model.l_d(i_load) - q * v_ref;
    let delta_v_hat = restricted_h1_solve(q, &rhs)?;

    let residual = (q * &delta_v_hat - &rhs).norm();
    let scale = rhs.norm().max(q.norm() * delta_v_hat.norm()).max(1.0);
    if residual > RESIDUAL_REL_TOL * scale {
        return Err(Error::Numerical(format!(
            "steady-state residual {residual:.3e} exceeds {RESIDUAL_REL_TOL:.0e} * {scale:.3e}"
        )));
    }

    let v_star = &delta_v_hat + DVector::from_element(n, alpha) + v_ref;
    let i_t_star = i_load + model.m_mat() * &v_star;
    let shared_level = model.scaling().scale(&i_t_star).mean();
    Ok(EquilibriumSolution {
        delta_v_hat,
        alpha,
        v_star,
        i_t_star,
        shared_level,
    })
}

/// Steady state of the unit-gain closed loop for constant inputs. `alpha`
/// selects one member of the equilibrium family; the trajectory from an
/// initial condition with average `m` converges to the member with
/// `alpha = m`.
pub fn solve_equilibrium_unit_gain(
    model: &CoupledModel,
    i_load: &DVector<f64>,
    v_ref: &DVector<f64>,
    alpha: f64,
) -> Result<EquilibriumSolution> {
    solve_common(model, i_load, v_ref, alpha)
}

/// Steady state of the first-order closed loop. Identical to the unit-gain
/// solution for any primary bandwidth: the lag matrix is invertible and
/// cancels from the equilibrium equations.
pub fn solve_equilibrium_first_order(
    model: &CoupledModel,
    i_load: &DVector<f64>,
    v_ref: &DVector<f64>,
    alpha: f64,
) -> Result<EquilibriumSolution> {
    solve_common(model, i_load, v_ref, alpha)
}

/// Exponential decay rate of the unit-gain loop on the zero-mean subspace:
/// the smallest strictly positive eigenvalue of `Q`.
pub fn convergence_rate_unit_gain(report: &SpectralReport) -> Result<f64> {
    if report.assumption_status == AssumptionStatus::Neither {
        return Err(Error::UnsupportedRegime(
            "convergence rate is only certified under a stability condition".into(),
        ));
    }
    report
        .smallest_positive_eig
        .ok_or_else(|| Error::Numerical("spectrum has no strictly positive eigenvalue".into()))
}

/// The two roots of `lambda^2 / omega_c + lambda + gamma = 0`, evaluated in
/// a cancellation-free form: the small real root comes from the product
/// identity rather than the difference of nearly equal terms.
pub fn stable_quadratic_roots(gamma: f64, omega_c: f64) -> [Complex<f64>; 2] {
    let disc = omega_c * omega_c - 4.0 * gamma * omega_c;
    if disc >= 0.0 {
        let big = (-omega_c - disc.sqrt()) / 2.0;
        let small = gamma * omega_c / big;
        [Complex::new(big, 0.0), Complex::new(small, 0.0)]
    } else {
        let re = -omega_c / 2.0;
        let im = (-disc).sqrt() / 2.0;
        [Complex::new(re, -im), Complex::new(re, im)]
    }
}

/// Spectrum of the assembled `2N x 2N` first-order closed loop predicted
/// from the positive eigenvalues `gamma_i` of `Q`: the fixed pair
/// `{0, -omega_c}` plus one quadratic-root pair per `gamma_i`.
pub fn first_order_eigenvalues(gammas: &[f64], omega_c: f64) -> Vec<Complex<f64>> {
    let mut out = Vec::with_capacity(2 * gammas.len() + 2);
    out.push(Complex::new(0.0, 0.0));
    out.push(Complex::new(-omega_c, 0.0));
    for &gamma in gammas {
        out.extend(stable_quadratic_roots(gamma, omega_c));
    }
    out
}

/// Positive eigenvalues of `Q` extracted with the report's zero tolerance.
pub fn positive_eigenvalues(report: &SpectralReport) -> Vec<f64> {
    report
        .real_eigenvalues()
        .into_iter()
        .filter(|&x| x > report.zero_tolerance)
        .collect()
}

/// Exponential decay rate of the first-order loop on the zero-mean product
/// subspace: the absolute value of the largest real part among the nonzero
/// eigenvalues of the assembled closed loop.
pub fn convergence_rate_first_order(report: &SpectralReport, omega_c: f64) -> Result<f64> {
    if report.assumption_status == AssumptionStatus::Neither {
        return Err(Error::UnsupportedRegime(
            "convergence rate is only certified under a stability condition".into(),
        ));
    }
    if !(omega_c > 0.0) {
        return Err(Error::MalformedGraph(format!(
            "primary bandwidth must be positive, got {omega_c}"
        )));
    }
    let gammas = positive_eigenvalues(report);
    let max_re = first_order_eigenvalues(&gammas, omega_c)
        .into_iter()
        .filter(|z| z.norm() > 0.0)
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(-max_re)
}

/// Fill the rate fields of a report in place. Rates stay absent when the
/// regime does not certify them.
pub fn attach_rates(report: &mut SpectralReport, omega_c: Option<f64>) {
    report.rate_unit_gain = convergence_rate_unit_gain(report).ok();
    report.rate_first_order = omega_c.and_then(|w| convergence_rate_first_order(report, w).ok());
}
