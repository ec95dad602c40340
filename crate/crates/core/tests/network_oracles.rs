mod common;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsc_core::network::*;
use tsc_core::scenario::{generate_grid, GridParams};

fn movements(n: usize) -> Vec<Movement> {
    (0..n as u32)
        .map(|i| Movement {
            id: MovementId(i),
            from: LaneId(i),
            to: LaneId(100 + i),
            turn: Turn::Through,
        })
        .collect()
}

#[test]
fn phases_match_exhaustive_independent_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..500 {
        let n = rng.gen_range(1..=12);
        let density = rng.gen_range(0.0..1.0);
        let ms = movements(n);
        let mut rel = ConflictRelation::empty(ms.iter().map(|m| m.id).collect());
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(density) {
                    rel.set_idx(i, j, true);
                }
            }
        }
        let phases = enumerate_phases(&ms, &rel).unwrap();
        let got: BTreeSet<Vec<u32>> = phases.iter().map(|p| p.movements.iter().map(|m| m.0).collect()).collect();
        assert_eq!(got.len(), phases.len(), "duplicate phases");
        assert_eq!(got, common::exhaustive_mis(n, &rel));
        for (k, p) in phases.iter().enumerate() {
            assert_eq!(p.index, k + 1);
        }
        let lowest: Vec<u32> = phases.iter().map(|p| p.movements[0].0).collect();
        assert!(lowest.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn too_many_movements_is_rejected() {
    let ms = movements(MAX_MOVEMENTS + 1);
    let rel = ConflictRelation::empty(ms.iter().map(|m| m.id).collect());
    assert!(enumerate_phases(&ms, &rel).is_err());
}

/// Chord model of a four-leg junction: each leg has an entry point just
/// counter-clockwise of its compass angle and an exit point just clockwise
/// (right-hand traffic). Two paths conflict when their chords share an
/// exit or strictly interleave.
fn chords_conflict(a: (f64, f64), b: (f64, f64)) -> bool {
    if a.1 == b.1 {
        return true;
    }
    if a.0 == b.0 {
        return false;
    }
    let inside = |x: f64, (s, e): (f64, f64)| {
        let span = (e - s).rem_euclid(360.0);
        let off = (x - s).rem_euclid(360.0);
        off > 0.0 && off < span
    };
    inside(b.0, a) != inside(b.1, a)
}

fn chord(net: &RoadNetwork, m: &Movement) -> (f64, f64) {
    let heading_in = net.lane(m.from).unwrap().bearing.unwrap();
    let heading_out = net.lane(m.to).unwrap().bearing.unwrap();
    let entry = (heading_in + 180.0 - 2.0).rem_euclid(360.0);
    let exit = (heading_out + 2.0).rem_euclid(360.0);
    (entry, exit)
}

#[test]
fn grid_conflicts_match_chord_crossings() {
    let scenario = generate_grid(&GridParams::default()).build().unwrap();
    let net = &scenario.network;
    let mut checked = 0;
    for node in &net.intersections {
        for (i, a) in node.movements.iter().enumerate() {
            for (j, b) in node.movements.iter().enumerate() {
                if i == j {
                    continue;
                }
                let expected = chords_conflict(chord(net, a), chord(net, b));
                assert_eq!(node.conflicts.conflicts(a.id, b.id), expected, "{} vs {} at {}", a.id, b.id, node.id);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn explicit_conflicts_are_symmetric() {
    let ms = movements(3);
    let rel = ConflictRelation::from_pairs(ms.iter().map(|m| m.id).collect(), &[(MovementId(0), MovementId(2))]).unwrap();
    assert!(rel.conflicts(MovementId(2), MovementId(0)));
    assert!(!rel.conflicts(MovementId(0), MovementId(0)));
    let phases = enumerate_phases(&ms, &rel).unwrap();
    let sets: Vec<Vec<u32>> = phases.iter().map(|p| p.movements.iter().map(|m| m.0).collect()).collect();
    assert_eq!(sets, vec![vec![0, 1], vec![1, 2]]);
}
