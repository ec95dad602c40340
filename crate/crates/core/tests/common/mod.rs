//! Brute-force oracles shared by integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use tsc_core::controllers::{CandidateSet, CriticModel, StateEncoding};
use tsc_core::network::ConflictRelation;

/// Every subset of `n` movements that is conflict-free and cannot be
/// extended, as sorted index lists.
pub fn exhaustive_mis(n: usize, rel: &ConflictRelation) -> BTreeSet<Vec<u32>> {
    let independent = |mask: u32| {
        (0..n).all(|i| (0..n).all(|j| i == j || mask & (1 << i) == 0 || mask & (1 << j) == 0 || !rel.conflicts_idx(i, j)))
    };
    let mut out = BTreeSet::new();
    for mask in 0u32..(1 << n) {
        if !independent(mask) {
            continue;
        }
        let maximal = (0..n).all(|k| mask & (1 << k) != 0 || !independent(mask | (1 << k)));
        if maximal {
            out.insert((0..n as u32).filter(|&i| mask & (1 << i) != 0).collect());
        }
    }
    out
}

/// Mean over quantile heads of the raw linear outputs.
pub fn critic_expectation(q: &CriticModel, h: &StateEncoding, p: usize, d: f64) -> f64 {
    let x = CriticModel::features(h, p, d);
    let total: f64 = q.weights.iter().map(|w| w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()).sum();
    total / q.weights.len() as f64
}

/// Scans every candidate; ties go to the shortest green.
pub fn argmax_duration(set: &CandidateSet, q: &CriticModel, h: &StateEncoding) -> f64 {
    let mut all = set.durations();
    all.sort_by(f64::total_cmp);
    let mut best = all[0];
    let mut best_value = critic_expectation(q, h, set.phase, best);
    for &d in &all[1..] {
        let v = critic_expectation(q, h, set.phase, d);
        if v > best_value {
            best = d;
            best_value = v;
        }
    }
    best
}
