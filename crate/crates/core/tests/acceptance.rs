//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured margin (run with `--nocapture` to see them).

mod common;

use std::time::Instant;

use common::*;
use mgc::dynamics::{simulate, step, SimOptions, SimState};
use mgc::equilibria::{
    convergence_rate_first_order, convergence_rate_unit_gain, first_order_eigenvalues,
    positive_eigenvalues, solve_equilibrium_unit_gain,
};
use mgc::model::{CoupledModel, Microgrid, PrimaryMode};
use mgc::pnp;
use mgc::scenario::{builtin_stage_scenario, evaluate, CheckKind, EventKind};
use mgc::spectral::counterexample::{counterexample, reference_mismatch, REFERENCE_TOLERANCE};
use mgc::spectral::AssumptionStatus;
use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

/// Criterion 1: the stored counterexample reproduces all nine reference
/// eigenvalues within 2e-3, including the negative-real complex pair and the
/// structural zero, in under a second.
#[test]
fn acceptance_01_counterexample_reproduction() {
    let started = Instant::now();
    let fix = counterexample();
    let worst = reference_mismatch(&fix.report.eigenvalues);
    assert!(
        worst <= REFERENCE_TOLERANCE,
        "worst eigenvalue mismatch {worst:.2e} exceeds {REFERENCE_TOLERANCE:.0e}"
    );
    let negative_pair = fix
        .report
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.re < 0.0 && (z.im.abs() - 0.0039).abs() <= REFERENCE_TOLERANCE)
        .count();
    assert_eq!(negative_pair, 2, "negative-real complex pair missing");
    assert_eq!(fix.report.inertia.zero, 1, "structural zero missing");
    assert_eq!(fix.report.assumption_status, AssumptionStatus::Neither);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 counterexample: PASS (worst mismatch {worst:.2e}, {} ms)",
        elapsed.as_millis()
    );
}

/// Criterion 2: spectral structure over 200 random models per certified
/// regime, plus 50 uncertified draws that must not crash.
#[test]
fn acceptance_02_spectral_structure_property_suite() {
    let started = Instant::now();
    let mut r = rng(0x5EC7_0201);
    for regime in ["d_identity", "commuting"] {
        for trial in 0..200 {
            let n = r.random_range(2..=12);
            let model = match regime {
                "d_identity" => random_d_identity_model(&mut r, n, PrimaryMode::UnitGain),
                _ => random_commuting_model(&mut r, n, PrimaryMode::UnitGain),
            };
            let report = model.analyze().unwrap();
            let expected = match regime {
                "d_identity" => AssumptionStatus::DIdentity,
                _ => AssumptionStatus::Commuting,
            };
            assert_eq!(report.assumption_status, expected, "{regime} trial {trial}");

            let scale = inf_norm(model.q_mat()).max(1.0);
            assert!(
                report.kernel_residual <= 1e-9 * scale,
                "{regime} trial {trial}: Q*1 residual {}",
                report.kernel_residual
            );
            assert!(
                report.range_residual <= 1e-9 * scale,
                "{regime} trial {trial}: 1^T*Q residual {}",
                report.range_residual
            );
            for z in &report.eigenvalues {
                assert!(
                    z.im.abs() <= 1e-8,
                    "{regime} trial {trial}: complex eigenvalue {z}"
                );
                assert!(
                    z.re >= -1e-8,
                    "{regime} trial {trial}: negative eigenvalue {}",
                    z.re
                );
            }
            assert_eq!(
                report.inertia.zero, 1,
                "{regime} trial {trial}: zero multiplicity {}",
                report.inertia.zero
            );
            assert!(
                report.is_consistent(),
                "{regime} trial {trial}: {:?}",
                report.violations
            );
        }
    }

    let mut defective = 0;
    for _ in 0..50 {
        let n = r.random_range(5..=12);
        let model = random_neither_model(&mut r, n);
        let report = model.analyze().unwrap();
        assert_eq!(report.assumption_status, AssumptionStatus::Neither);
        let tol = 1e-8 * inf_norm(model.q_mat()).max(1.0);
        if !report.complex_eigenvalues().is_empty()
            || report.real_eigenvalues().iter().any(|x| *x < -tol)
        {
            defective += 1;
        }
    }
    assert!(
        defective > 0,
        "no defective spectra among 50 uncertified draws"
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 2 spectral properties: PASS (400 certified + 50 uncertified models, \
         {} defective, {} ms)",
        defective,
        elapsed.as_millis()
    );
}

fn fit_free_decay_unit_gain(model: &CoupledModel, x0: DVector<f64>, rate: f64) -> f64 {
    let lambda_max = model.analyze().unwrap().max_abs_eigenvalue();
    let dt = 1e-3_f64.min(0.1 / lambda_max);
    let horizon = 20.0 / rate;
    let steps = (horizon / dt).ceil() as usize;
    let n = model.n();
    let zero = DVector::zeros(n);
    let mut state = SimState {
        t: 0.0,
        delta_v: x0,
        v: None,
    };
    let mut samples = Vec::new();
    for k in 1..=steps {
        state = step(model, &state, dt, &zero, &zero).unwrap();
        let t = dt * k as f64;
        if t >= 0.7 * horizon && k % 50 == 0 {
            let norm = state.delta_v.norm();
            if norm > 1e-140 {
                samples.push((t, norm.ln()));
            }
        }
    }
    assert!(samples.len() >= 8, "too few decay samples");
    -fitted_slope(&samples)
}

/// Criterion 3: on 20 random commuting models the fitted free-decay slope of
/// the unit-gain loop matches the smallest positive eigenvalue within 5%.
#[test]
fn acceptance_03_unit_gain_decay_rate() {
    let mut r = rng(0x5EC7_0301);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let n = r.random_range(3..=8);
        let model = random_commuting_model(&mut r, n, PrimaryMode::UnitGain);
        let report = model.analyze().unwrap();
        let rate = convergence_rate_unit_gain(&report).unwrap();
        let x0 = random_zero_mean_vector(&mut r, n);
        let fitted = fit_free_decay_unit_gain(&model, x0, rate);
        let rel = (fitted - rate).abs() / rate;
        worst = worst.max(rel);
        assert!(
            rel <= 0.05,
            "trial {trial}: fitted {fitted}, predicted {rate} ({rel:.3})"
        );
    }
    println!(
        "ACCEPTANCE 3 unit-gain rate: PASS (20 models, worst error {:.2e})",
        worst
    );
}

/// Criterion 4: the assembled first-order closed loop has exactly the
/// predicted spectrum ({0, -omega_c} plus quadratic-root pairs) on 100
/// random models, and its simulated decay matches the predicted rate within
/// 5% on 20 models.
#[test]
fn acceptance_04_first_order_spectrum_and_decay() {
    let mut r = rng(0x5EC7_0401);

    // Spectrum multiset comparison.
    let mut worst_spec: f64 = 0.0;
    for trial in 0..100 {
        let n = r.random_range(2..=12);
        let omega_c = r.random_range(20.0..2000.0);
        let model = random_commuting_model(&mut r, n, PrimaryMode::FirstOrder { omega_c });
        let report = model.analyze().unwrap();
        let q = model.q_mat();

        let mut assembled = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                assembled[(i, n + j)] = -q[(i, j)];
            }
            assembled[(n + i, i)] = omega_c;
            assembled[(n + i, n + i)] = -omega_c;
        }
        let mut got: Vec<Complex<f64>> = assembled.complex_eigenvalues().iter().cloned().collect();
        let predicted = first_order_eigenvalues(&positive_eigenvalues(&report), omega_c);
        assert_eq!(got.len(), predicted.len(), "trial {trial}");
        for p in &predicted {
            let (idx, dist) = got
                .iter()
                .enumerate()
                .map(|(i, g)| (i, (g - p).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            let rel = dist / (1.0 + p.norm());
            worst_spec = worst_spec.max(rel);
            assert!(
                rel <= 1e-6,
                "trial {trial}: eigenvalue {p} off by {rel:.2e}"
            );
            got.swap_remove(idx);
        }
    }

    // Simulated decay of the free first-order loop.
    let mut worst_rate: f64 = 0.0;
    for trial in 0..20 {
        let n = r.random_range(3..=8);
        let omega_c = r.random_range(20.0..200.0);
        let model = random_commuting_model(&mut r, n, PrimaryMode::FirstOrder { omega_c });
        let report = model.analyze().unwrap();
        let rate = convergence_rate_first_order(&report, omega_c).unwrap();
        let lambda_max = report.max_abs_eigenvalue();
        let dt = 1e-3_f64.min(0.1 / omega_c).min(0.1 / lambda_max);
        let horizon = 20.0 / rate;
        let steps = (horizon / dt).ceil() as usize;
        let zero = DVector::zeros(n);
        let mut state = SimState {
            t: 0.0,
            delta_v: random_zero_mean_vector(&mut r, n),
            v: Some(random_zero_mean_vector(&mut r, n)),
        };
        let mut samples = Vec::new();
        for k in 1..=steps {
            state = step(&model, &state, dt, &zero, &zero).unwrap();
            let t = dt * k as f64;
            if t >= 0.7 * horizon && k % 50 == 0 {
                let norm = (state.delta_v.norm_squared()
                    + state.v.as_ref().unwrap().norm_squared())
                .sqrt();
                if norm > 1e-140 {
                    samples.push((t, norm.ln()));
                }
            }
        }
        assert!(samples.len() >= 8, "too few decay samples");
        let fitted = -fitted_slope(&samples);
        let rel = (fitted - rate).abs() / rate;
        worst_rate = worst_rate.max(rel);
        assert!(
            rel <= 0.05,
            "trial {trial}: fitted {fitted}, predicted {rate} ({rel:.3})"
        );
    }
    println!(
        "ACCEPTANCE 4 first-order spectrum and rate: PASS (100 spectra, worst {:.2e}; \
         20 decays, worst {:.2e})",
        worst_spec, worst_rate
    );
}

/// Criterion 5: the staged scenario meets every sharing/balancing threshold
/// and the plug-in current pattern under both abstractions at dt = 1 ms,
/// within the wall-clock budget.
#[test]
fn acceptance_05_staged_scenario() {
    let started = Instant::now();
    let scenario = builtin_stage_scenario();
    assert!(
        scenario.checks.len() == 11
            && scenario
                .checks
                .iter()
                .any(|c| matches!(c.kind, CheckKind::CurrentRatio { ratio, .. } if ratio == 3.0)),
        "builtin checks must cover the stage thresholds and current ratios"
    );
    for mode in [
        PrimaryMode::UnitGain,
        PrimaryMode::FirstOrder {
            omega_c: 2.0 * std::f64::consts::PI * 100.0,
        },
    ] {
        let opts = SimOptions {
            dt: Some(1e-3),
            mode_override: Some(mode),
            ..Default::default()
        };
        let trace = simulate(&scenario, &opts).unwrap();
        let results = evaluate(&trace, &scenario).unwrap();
        for res in &results {
            assert!(
                res.passed,
                "{mode:?}: check {:?} failed with achieved {}",
                res.check, res.achieved
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 5 staged scenario: PASS (both abstractions, 11 checks each, {} ms)",
        elapsed.as_millis()
    );
}

/// Replays the builtin event sequence through the structural operations,
/// integrating between events and tracking the worst drift of the
/// correction average.
fn builtin_replay_drift(mode: PrimaryMode) -> f64 {
    let scenario = builtin_stage_scenario();
    let mut grid = scenario.initial_grid(mode).unwrap();
    let mut state = SimState::initial(&grid);
    let mut worst: f64 = 0.0;

    let mut boundaries: Vec<(f64, Vec<&EventKind>)> = Vec::new();
    for ev in &scenario.events {
        match boundaries.last_mut() {
            Some((t, group)) if *t == ev.time => group.push(&ev.kind),
            _ => boundaries.push((ev.time, vec![&ev.kind])),
        }
    }
    boundaries.push((scenario.horizon, Vec::new()));

    let mut t_start = 0.0;
    for (t_end, group) in boundaries {
        let (model, _) = grid.validate_for_simulation().unwrap();
        let steps = ((t_end - t_start) / 1e-3).round() as usize;
        let i_load = grid.i_load_vec();
        let v_ref = grid.v_ref_vec();
        for _ in 0..steps {
            state = step(&model, &state, 1e-3, &i_load, &v_ref).unwrap();
            worst = worst.max(state.delta_v.mean().abs());
        }
        for kind in group {
            match kind {
                EventKind::ConnectLine { a, b } => {
                    let decl = scenario
                        .lines
                        .iter()
                        .find(|l| l.line.joins(*a, *b))
                        .unwrap();
                    grid.connect_line(decl.line.clone()).unwrap();
                }
                EventKind::EnableSecondary { dgus } => {
                    let newly = grid.enable_secondary(dgus, &scenario.comm).unwrap();
                    for idx in newly {
                        state.delta_v[idx] = 0.0;
                    }
                }
                EventKind::PlugIn { dgu } => {
                    let event =
                        pnp::PlugEvent::from_declarations(*dgu, &grid, &scenario, t_end).unwrap();
                    pnp::plug_in(&mut grid, &mut state, &event).unwrap();
                }
                EventKind::Unplug { dgu } => {
                    pnp::unplug(&mut grid, &mut state, *dgu, true).unwrap();
                }
                EventKind::LoadStep { dgu, new_load } => {
                    grid.set_load(*dgu, *new_load).unwrap();
                }
            }
            worst = worst.max(state.delta_v.mean().abs());
        }
        t_start = t_end;
    }
    worst
}

/// Criterion 6: the correction average is invariant: below 1e-7 V drift over
/// an event-free 45 s horizon in both models, and below 1e-6 V across the
/// full builtin event sequence.
#[test]
fn acceptance_06_average_invariance() {
    let mut r = rng(0x5EC7_0601);
    // Event-free runs on the full seven-DGU network.
    for mode in [
        PrimaryMode::UnitGain,
        PrimaryMode::FirstOrder { omega_c: 628.318 },
    ] {
        let model = seven_dgu_model(mode);
        let n = model.n();
        let x0 = random_zero_mean_vector(&mut r, n);
        let initial_mean = x0.mean();
        let lambda_max = model.analyze().unwrap().max_abs_eigenvalue();
        let dt = match mode.omega_c() {
            Some(w) => 1e-3_f64.min(0.1 / w).min(0.1 / lambda_max),
            None => 1e-3_f64.min(0.1 / lambda_max),
        };
        let steps = (45.0 / dt).ceil() as usize;
        let i_load = DVector::from_iterator(n, (0..n).map(|_| r.random_range(0.5..5.0)));
        let v_ref = DVector::from_element(n, 48.0);
        let v0 = match mode {
            PrimaryMode::UnitGain => None,
            PrimaryMode::FirstOrder { .. } => Some(&x0 + &v_ref),
        };
        let mut state = SimState {
            t: 0.0,
            delta_v: x0.clone(),
            v: v0,
        };
        let mut worst: f64 = 0.0;
        for _ in 0..steps {
            state = step(&model, &state, dt, &i_load, &v_ref).unwrap();
            worst = worst.max((state.delta_v.mean() - initial_mean).abs());
        }
        assert!(worst < 1e-7, "{mode:?}: event-free drift {worst:.2e}");
        println!("ACCEPTANCE 6a average invariance ({mode:?}): PASS (drift {worst:.2e} V)");
    }

    for mode in [
        PrimaryMode::UnitGain,
        PrimaryMode::FirstOrder { omega_c: 628.318 },
    ] {
        let worst = builtin_replay_drift(mode);
        assert!(worst < 1e-6, "{mode:?}: event-sequence drift {worst:.2e}");
        println!("ACCEPTANCE 6b average invariance ({mode:?}): PASS (drift {worst:.2e} V)");
    }
}

fn seven_dgu_model(mode: PrimaryMode) -> CoupledModel {
    let scenario = builtin_stage_scenario();
    let mut grid = {
        // All seven DGUs present with every line closed.
        let specs: Vec<_> = scenario.dgus.iter().map(|d| d.spec.clone()).collect();
        Microgrid::new(specs, scenario.k_i, scenario.regime, mode).unwrap()
    };
    for l in &scenario.lines {
        grid.connect_line(l.line.clone()).unwrap();
    }
    grid.enable_secondary(&grid.ids(), &[]).unwrap();
    let (model, _) = grid.validate_for_simulation().unwrap();
    model
}

/// Criterion 7: the restricted solve agrees with an independent dense
/// least-squares solve of the augmented system, and the simulated trajectory
/// lands on the solved equilibrium.
#[test]
fn acceptance_07_equilibrium_oracle_equivalence() {
    let mut r = rng(0x5EC7_0701);
    let mut worst_oracle: f64 = 0.0;
    for trial in 0..50 {
        let n = r.random_range(2..=10);
        let model = random_commuting_model(&mut r, n, PrimaryMode::UnitGain);
        let i_load = DVector::from_iterator(n, (0..n).map(|_| r.random_range(0.5..5.0)));
        let v_ref = DVector::from_element(n, 48.0);
        let sol = solve_equilibrium_unit_gain(&model, &i_load, &v_ref, 0.0).unwrap();

        // Independent oracle: dense least-squares on the augmented system
        // [Q; 1^T/n] x = [rhs; 0], solved through the SVD.
        let q = model.q_mat();
        let rhs = -model.l_d(&i_load) - q * &v_ref;
        let mut aug = DMatrix::zeros(n + 1, n);
        aug.view_mut((0, 0), (n, n)).copy_from(q);
        for j in 0..n {
            aug[(n, j)] = 1.0 / n as f64;
        }
        let mut b = DVector::zeros(n + 1);
        b.rows_mut(0, n).copy_from(&rhs);
        let oracle = aug.svd(true, true).solve(&b, 1e-13).unwrap();

        let rel = (&sol.delta_v_hat - &oracle).norm() / oracle.norm().max(1e-12);
        worst_oracle = worst_oracle.max(rel);
        assert!(
            rel <= 1e-8,
            "trial {trial}: restricted vs least-squares {rel:.2e}"
        );

        // The trajectory from a zero-average start lands on the solution.
        let report = model.analyze().unwrap();
        let rate = convergence_rate_unit_gain(&report).unwrap();
        let dt = 1e-3_f64.min(0.1 / report.max_abs_eigenvalue());
        let steps = ((20.0 / rate) / dt).ceil() as usize;
        let mut state = SimState {
            t: 0.0,
            delta_v: DVector::zeros(n),
            v: None,
        };
        for _ in 0..steps {
            state = step(&model, &state, dt, &i_load, &v_ref).unwrap();
        }
        let landing = (&state.delta_v - &sol.delta_v_hat).norm();
        assert!(
            landing <= 1e-4 * sol.delta_v_hat.norm() + 1e-6,
            "trial {trial}: trajectory missed the equilibrium by {landing:.2e}"
        );
    }
    println!(
        "ACCEPTANCE 7 equilibrium oracle: PASS (50 models, worst oracle gap {:.2e})",
        worst_oracle
    );
}

/// Criterion 8: output currents conserve the total load at every sample of
/// the staged run, under both abstractions.
#[test]
fn acceptance_08_current_conservation() {
    let scenario = builtin_stage_scenario();
    for mode in [
        PrimaryMode::UnitGain,
        PrimaryMode::FirstOrder {
            omega_c: 2.0 * std::f64::consts::PI * 100.0,
        },
    ] {
        let opts = SimOptions {
            dt: Some(1e-3),
            mode_override: Some(mode),
            ..Default::default()
        };
        let trace = simulate(&scenario, &opts).unwrap();
        let mut worst: f64 = 0.0;
        for row in &trace.rows {
            // Piecewise-constant expected totals; boundary samples belong to
            // the pre-event segment.
            let dgu7 = row.t > 15.0 + 1e-9;
            let stepped = row.t > 25.0 + 1e-9;
            let dgu3_gone = row.t > 35.0 + 1e-9;
            let mut expected = 4.0 + 4.0 + 4.0 + 2.0 + 2.0 + 1.5;
            if dgu7 {
                expected += 1.5;
            }
            if stepped {
                expected += 4.0;
            }
            if dgu3_gone {
                expected -= 4.0;
            }
            let total: f64 = row.i_t.iter().filter(|x| x.is_finite()).sum();
            let rel = (total - expected).abs() / expected;
            worst = worst.max(rel);
            assert!(
                rel <= 1e-9,
                "{mode:?} t = {}: total {total} vs {expected}",
                row.t
            );
        }
        println!(
            "ACCEPTANCE 8 conservation ({mode:?}): PASS (worst relative imbalance {:.2e})",
            worst
        );
    }
}
