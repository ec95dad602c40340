mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsc_core::controllers::*;
use tsc_core::scenario::{generate_grid, GridParams};
use tsc_core::sim::Simulator;

fn random_state(rng: &mut ChaCha8Rng, lanes: usize, phases: usize) -> StateEncoding {
    let window = (0..3).map(|_| (0..lanes).map(|_| rng.gen_range(0..30) as f64).collect()).collect();
    StateEncoding {
        window,
        incoming: (0..lanes).collect(),
        outgoing: vec![],
        outgoing_queues: vec![],
        pressures: (0..phases).map(|_| rng.gen_range(-20.0..40.0)).collect(),
        phase: Some(rng.gen_range(1..=phases)),
        elapsed: rng.gen_range(0..60),
    }
}

#[test]
fn select_duration_matches_exhaustive_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let phases = rng.gen_range(1..6);
        let h = random_state(&mut rng, 4, phases);
        let mut q = CriticModel::new(rng.gen_range(1..8), 0.1, 0.0);
        for w in &mut q.weights {
            for v in w.iter_mut() {
                *v = rng.gen_range(-3.0..3.0);
            }
        }
        let n = rng.gen_range(1..=20);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(5.0..60.0)).collect();
        let set = build_candidates(rng.gen_range(1..=phases), &raw, &[], (5.0, 60.0));
        assert_eq!(select_duration(&set, &q, &h), common::argmax_duration(&set, &q, &h));
    }
}

#[test]
fn pressure_selection_matches_brute_force() {
    let s = generate_grid(&GridParams::default()).build().unwrap();
    let sim = Simulator::new(&s.network, &s.demand, &s.sim).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..300 {
        let node = rng.gen_range(0..sim.intersection_count());
        let snapshot: Vec<u32> = (0..sim.lane_count()).map(|_| rng.gen_range(0..15)).collect();
        let phases = sim.phase_lanes(node);
        let h = encode_state(
            std::slice::from_ref(&snapshot),
            sim.incoming(node),
            sim.outgoing(node),
            phases,
            None,
            0,
            1,
        );
        let pressure = |p: &[(usize, usize)]| -> i64 {
            p.iter().map(|&(a, b)| snapshot[a] as i64 - snapshot[b] as i64).sum()
        };
        let values: Vec<i64> = phases.iter().map(|p| pressure(p)).collect();
        let max = *values.iter().max().unwrap();
        let expected = values.iter().position(|&v| v == max).unwrap() + 1;
        assert_eq!(pressure_select_phase(&h, phases), expected);
        for (i, &v) in values.iter().enumerate() {
            assert_eq!(h.pressure(i + 1), v as f64);
        }
    }
}

#[test]
fn history_returns_nearest_k_by_return() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let h = random_state(&mut rng, 3, 2);
        let mut pool = ExperiencePool::new(64);
        let mut entries = Vec::new();
        for i in 0..rng.gen_range(0..40) {
            let e = PoolEntry {
                digest: [rng.gen_range(0.0..60.0), rng.gen_range(-20.0..20.0), rng.gen_range(0.0..30.0)],
                phase: rng.gen_range(1..=2),
                duration: 5.0 + i as f64,
                ret: rng.gen_range(-10.0..0.0),
            };
            pool.push(e.clone());
            entries.push(e);
        }
        let k = rng.gen_range(1..6);
        let key = h.digest(1);
        let dist = |e: &PoolEntry| e.digest.iter().zip(&key).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut same: Vec<&PoolEntry> = entries.iter().filter(|e| e.phase == 1).collect();
        same.sort_by(|a, b| dist(a).total_cmp(&dist(b)));
        same.truncate(k);
        same.sort_by(|a, b| b.ret.total_cmp(&a.ret));
        let expected: Vec<f64> = same.iter().map(|e| e.duration).collect();
        assert_eq!(propose_history(&pool, &h, 1, k), expected);
    }
}

#[test]
fn sampler_marginal_matches_last_schedule_step() {
    let h = StateEncoding {
        window: vec![vec![4.0, 6.0]],
        incoming: vec![0, 1],
        outgoing: vec![],
        outgoing_queues: vec![],
        pressures: vec![10.0],
        phase: None,
        elapsed: 0,
    };
    let sampler = GenerativeDurationSampler {
        schedule: vec![12.0, 8.0, 4.0, 2.0],
        mean_weights: [20.0, 10.0, 4.0],
    };
    let mu = 20.0 + 10.0 * 0.5 + 4.0 * 0.5;
    assert!((sampler.mean(&h, 1) - mu).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs = propose_generative(&sampler, &h, 1, 50_000, (-1e9, 1e9), &mut rng);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((mean - mu).abs() < 0.05, "mean {mean}");
    assert!((sd - 2.0).abs() < 0.05, "sd {sd}");
    let clamped = propose_generative(&sampler, &h, 1, 1000, (5.0, 60.0), &mut rng);
    assert!(clamped.iter().all(|d| (5.0..=60.0).contains(d)));
}
