//! Seeded random model generation shared by the integration suites.
//!
//! Parameter ranges stay within one decade so the generated products are
//! well-conditioned: conductances in [0.5, 5] S, scaling entries in
//! [0.5, 2] 1/A, proportionality constants in [0.5, 2].

#![allow(dead_code)]

use mgc::graph::{CommEdge, CommNetwork, DguId, ElectricalNetwork, Line};
use mgc::model::{CoupledModel, PrimaryMode};
use mgc::spectral::ScalingMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ids(n: usize) -> Vec<DguId> {
    (1..=n as u32).map(DguId).collect()
}

/// Random connected network on `n` nodes: a random spanning tree plus up to
/// `n` extra chords, resistances in [0.2, 2.0] ohm.
pub fn random_connected_network(rng: &mut ChaCha8Rng, n: usize) -> ElectricalNetwork {
    let mut lines = Vec::new();
    let mut pairs = std::collections::HashSet::new();
    for k in 1..n {
        let j = rng.random_range(0..k);
        pairs.insert((j.min(k), j.max(k)));
        lines.push(Line {
            from: DguId(j as u32 + 1),
            to: DguId(k as u32 + 1),
            resistance: rng.random_range(0.4..1.25),
            inductance: 0.0,
        });
    }
    if n >= 2 {
        for _ in 0..rng.random_range(0..=n) {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b && pairs.insert((a.min(b), a.max(b))) {
                lines.push(Line {
                    from: DguId(a as u32 + 1),
                    to: DguId(b as u32 + 1),
                    resistance: rng.random_range(0.4..1.25),
                    inductance: 0.0,
                });
            }
        }
    }
    ElectricalNetwork::new(ids(n), lines).expect("generated network is well-formed")
}

pub fn random_scaling(rng: &mut ChaCha8Rng, n: usize) -> ScalingMatrix {
    ScalingMatrix::from_entries((0..n).map(|_| rng.random_range(0.5..2.0)).collect())
        .expect("entries positive")
}

/// Model satisfying the commuting condition: communication mirrors the
/// electrical topology with a common proportionality constant, and the
/// scaling matrix is an arbitrary positive diagonal.
pub fn random_commuting_model(rng: &mut ChaCha8Rng, n: usize, mode: PrimaryMode) -> CoupledModel {
    let el = random_connected_network(rng, n);
    let mu = rng.random_range(0.5..2.0);
    let k_i = rng.random_range(0.5..2.0);
    let comm = CommNetwork::from_electrical(&el, mu, k_i).expect("derived comm is well-formed");
    let scaling = random_scaling(rng, n);
    CoupledModel::assemble(el, comm, scaling, mode).expect("model assembles")
}

/// Model satisfying the unit-scaling condition: independent random
/// connected communication topology, identity scaling.
pub fn random_d_identity_model(rng: &mut ChaCha8Rng, n: usize, mode: PrimaryMode) -> CoupledModel {
    let el = random_connected_network(rng, n);
    let comm_topology = random_connected_network(rng, n);
    let edges: Vec<CommEdge> = comm_topology
        .lines()
        .iter()
        .map(|l| CommEdge {
            a: l.from,
            b: l.to,
            coefficient: rng.random_range(0.8..2.5),
        })
        .collect();
    let comm = CommNetwork::new(el.node_ids().to_vec(), edges, rng.random_range(0.5..2.0))
        .expect("comm is well-formed");
    CoupledModel::assemble(el, comm, ScalingMatrix::identity(n), mode).expect("model assembles")
}

/// Model outside both certified regimes: mismatched topologies and a
/// non-identity scaling. Redraws until the product genuinely fails the
/// commuting check.
pub fn random_neither_model(rng: &mut ChaCha8Rng, n: usize) -> CoupledModel {
    assert!(n >= 4, "small graphs can commute by coincidence");
    for _ in 0..64 {
        let el = random_connected_network(rng, n);
        let comm_topology = random_connected_network(rng, n);
        let edges: Vec<CommEdge> = comm_topology
            .lines()
            .iter()
            .map(|l| CommEdge {
                a: l.from,
                b: l.to,
                coefficient: rng.random_range(0.8..2.5),
            })
            .collect();
        let comm = CommNetwork::new(el.node_ids().to_vec(), edges, 1.0).expect("well-formed");
        let scaling = random_scaling(rng, n);
        let model =
            CoupledModel::assemble(el, comm, scaling, PrimaryMode::UnitGain).expect("assembles");
        let report = model.analyze().expect("dimensions agree");
        if report.assumption_status == mgc::spectral::AssumptionStatus::Neither {
            return model;
        }
    }
    panic!("could not draw a non-commuting model in 64 attempts");
}

pub fn random_zero_mean_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
    let mean = v.mean();
    v.map(|x| x - mean)
}

pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Least-squares slope of `ln ||x||` samples, used to measure decay rates.
pub fn fitted_slope(samples: &[(f64, f64)]) -> f64 {
    let n = samples.len() as f64;
    let sx: f64 = samples.iter().map(|(t, _)| t).sum();
    let sy: f64 = samples.iter().map(|(_, y)| y).sum();
    let sxx: f64 = samples.iter().map(|(t, _)| t * t).sum();
    let sxy: f64 = samples.iter().map(|(t, y)| t * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
