//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsc_core::controllers::*;
use tsc_core::curation::*;
use tsc_core::deliberation::*;
use tsc_core::experiment::*;
use tsc_core::network::*;
use tsc_core::scenario::{generate_grid, GridParams};
use tsc_core::sim::{SimState, Simulator};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn grid_request(controller: ControllerSpec) -> RunRequest {
    RunRequest {
        name: "grid3x3".into(),
        scenario: generate_grid(&GridParams::default()),
        controller: Some(controller),
        seeds: SEEDS.to_vec(),
        horizon: Some(3600),
        jobs: None,
        trace: false,
    }
}

fn medians(controller: ControllerSpec) -> (f64, f64) {
    let r = run(&grid_request(controller)).expect("run");
    (r.median.att.unwrap_or(f64::INFINITY), r.median.awt.unwrap_or(f64::INFINITY))
}

fn baseline_ordering(mp: &mut Option<f64>) -> Outcome {
    let started = Instant::now();
    let (mp_att, mp_awt) = medians(ControllerSpec::max_pressure());
    let (ft_att, ft_awt) = medians(ControllerSpec::fixed_time());
    let (rn_att, rn_awt) = medians(ControllerSpec::Random);
    let secs = started.elapsed().as_secs_f64();
    *mp = Some(mp_att);
    let pass = mp_att < ft_att && ft_att < rn_att && mp_awt < ft_awt && ft_awt < rn_awt && secs < 60.0;
    outcome(
        pass,
        format!(
            "ATT max_pressure {mp_att:.2} < fixed_time {ft_att:.2} < random {rn_att:.2}; \
             AWT {mp_awt:.2} < {ft_awt:.2} < {rn_awt:.2}; {secs:.1} s (limit 60)"
        ),
    )
}

fn assistant_vs_pressure(mp: Option<f64>) -> Outcome {
    let mp_att = mp.unwrap_or_else(|| medians(ControllerSpec::max_pressure()).0);
    let (rl_att, _) = medians(ControllerSpec::RlAssistant(RlConfig::default()));
    outcome(
        rl_att <= 1.02 * mp_att,
        format!("median ATT rl_assistant {rl_att:.2} <= 1.02 x max_pressure {mp_att:.2} = {:.2}", 1.02 * mp_att),
    )
}

fn duration_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let phases = rng.gen_range(1..6);
        let lanes = rng.gen_range(1..6);
        let h = StateEncoding {
            window: (0..3).map(|_| (0..lanes).map(|_| rng.gen_range(0..30) as f64).collect()).collect(),
            incoming: (0..lanes).collect(),
            outgoing: vec![],
            outgoing_queues: vec![],
            pressures: (0..phases).map(|_| rng.gen_range(-20.0..40.0)).collect(),
            phase: Some(rng.gen_range(1..=phases)),
            elapsed: rng.gen_range(0..60),
        };
        let mut q = CriticModel::new(rng.gen_range(1..8), 0.1, 0.0);
        for w in &mut q.weights {
            for v in w.iter_mut() {
                *v = rng.gen_range(-3.0..3.0);
            }
        }
        let raw: Vec<f64> = (0..rng.gen_range(1..=20)).map(|_| rng.gen_range(5.0..60.0)).collect();
        let set = build_candidates(rng.gen_range(1..=phases), &raw, &[], (5.0, 60.0));
        if select_duration(&set, &q, &h) != common::argmax_duration(&set, &q, &h) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches on 1000 instances"))
}

fn argmax(map: &BTreeMap<String, f64>) -> String {
    map.iter()
        .fold(None::<(&String, f64)>, |best, (k, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((k, v)),
        })
        .unwrap()
        .0
        .clone()
}

fn fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=10);
        let q: BTreeMap<String, f64> = (0..n).map(|i| (format!("a{i}"), rng.gen_range(-100.0..100.0))).collect();
        let r: BTreeMap<String, f64> = (0..n).map(|i| (format!("a{i}"), rng.gen_range(0.0..1.0))).collect();
        let at = |alpha| fuse_priority(&q, &r, &PriorityConfig { alpha, ..PriorityConfig::default() }).unwrap();
        if argmax(&at(1.0)) != argmax(&q) || argmax(&at(0.0)) != argmax(&r) {
            bad += 1;
        }
    }
    let q = BTreeMap::from([("a".to_string(), 0.0), ("b".to_string(), 10.0)]);
    let r = BTreeMap::from([("a".to_string(), 1.0), ("b".to_string(), 0.0)]);
    let s = fuse_priority(&q, &r, &PriorityConfig { alpha: 0.5, ..PriorityConfig::default() }).unwrap();
    let hand = (s["a"] - 0.5).abs() <= 1e-12 && (s["b"] - 0.5).abs() <= 1e-12;
    outcome(
        bad == 0 && hand,
        format!("{bad} argmax mismatches on 1000 maps; hand example s(a)={} s(b)={}", s["a"], s["b"]),
    )
}

fn record(priority: f64, tick: u64) -> PromptRecord {
    PromptRecord {
        prompt: format!("p{tick}"),
        answer: format!("a{tick}"),
        priority,
        provenance: if priority < 0.0 { Provenance::NonDeliberated } else { Provenance::Deliberated },
        ids: RecordIds {
            scenario: "s".into(),
            intersection: 1,
            tick,
        },
    }
}

fn loss() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_uniform: f64 = 0.0;
    let mut lambda_dependent = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..30);
        let w = rng.gen_range(0.01..1.0);
        let ce: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let batch = CurationBatch {
            plus: (0..n as u64).map(|i| record(w, i)).collect(),
            minus: vec![],
            weights: vec![w; n],
            lambda_neg: rng.gen_range(0.0..2.0),
        };
        let mean = ce.iter().sum::<f64>() / n as f64;
        worst_uniform = worst_uniform.max((evaluate_curation_loss(&batch, &ce, &[]).unwrap() - mean).abs());

        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let with_minus = |m: usize, ul: &[f64]| {
            let b = CurationBatch {
                plus: (0..n as u64).map(|i| record(weights[i as usize], i)).collect(),
                minus: (0..m as u64).map(|i| record(-1.0, 100 + i)).collect(),
                weights: weights.clone(),
                lambda_neg: 0.0,
            };
            evaluate_curation_loss(&b, &ce, ul).unwrap()
        };
        let m = rng.gen_range(1..10);
        let ul: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..50.0)).collect();
        if with_minus(0, &[]) != with_minus(m, &ul) {
            lambda_dependent += 1;
        }
    }
    let hand_batch = CurationBatch {
        plus: vec![record(1.0, 0), record(3.0, 1)],
        minus: vec![record(-1.0, 2)],
        weights: vec![1.0, 3.0],
        lambda_neg: 0.5,
    };
    let hand = evaluate_curation_loss(&hand_batch, &[2.0, 4.0], &[1.0]).unwrap();
    outcome(
        worst_uniform <= 1e-12 && hand == 4.0 && lambda_dependent == 0,
        format!(
            "uniform-weight deviation {worst_uniform:.1e} (tol 1e-12); hand example {hand}; \
             {lambda_dependent} cases where the negative set changed a lambda_neg=0 loss"
        ),
    )
}

fn phase_enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad = 0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=12);
        let ms: Vec<Movement> = (0..n as u32)
            .map(|i| Movement {
                id: MovementId(i),
                from: LaneId(i),
                to: LaneId(100 + i),
                turn: Turn::Through,
            })
            .collect();
        let mut rel = ConflictRelation::empty(ms.iter().map(|m| m.id).collect());
        let density = rng.gen_range(0.0..1.0);
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(density) {
                    rel.set_idx(i, j, true);
                }
            }
        }
        let got: BTreeSet<Vec<u32>> = enumerate_phases(&ms, &rel)
            .unwrap()
            .iter()
            .map(|p| p.movements.iter().map(|m| m.0).collect())
            .collect();
        if got != common::exhaustive_mis(n, &rel) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} mismatches on 500 conflict graphs"))
}

fn conservation_and_determinism() -> Outcome {
    let s = generate_grid(&GridParams::default()).build().unwrap();
    let sim = Simulator::new(&s.network, &s.demand, &s.sim).unwrap();
    let mut controller = BaselineController::new(&ControllerSpec::max_pressure(), &sim, 1);
    let mut violations = 0;
    let mut ticks = 0;
    let mut check = |_: &Simulator, st: &SimState| {
        ticks += 1;
        if st.spawned() != st.queued() + st.in_transit_count() + st.completed() {
            violations += 1;
        }
    };
    run_episode(&sim, &mut controller, 1, 3600, &mut check).unwrap();
    let csv = || {
        let r = run(&grid_request(ControllerSpec::fixed_time())).unwrap();
        let mut rows = r.rows.clone();
        rows.push(r.median);
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        buf
    };
    let identical = csv() == csv();
    outcome(
        violations == 0 && ticks == 3600 && identical,
        format!("{violations} conservation violations over {ticks} ticks; metrics CSV identical: {identical}"),
    )
}

fn deliberation() -> Outcome {
    let mut run_req = grid_request(ControllerSpec::RlAssistant(RlConfig::default()));
    run_req.seeds = vec![1];
    run_req.horizon = Some(600);
    let script = ClientConfig::Mock(MockConfig {
        reply: MockReply::Script(vec![
            ScriptStep::Fail("rate limited".into()),
            ScriptStep::Reply("Serve the longest queue first.".into()),
            ScriptStep::Reply("A moderate green avoids starving the cross street.".into()),
        ]),
        max_retries: 2,
    });
    let req = CurateRequest {
        run: run_req,
        priority: PriorityConfig::default(),
        deliberation: DeliberationConfig {
            defenders: vec![ClientConfig::mock(), script],
            consensus: ClientConfig::mock(),
            params: DeliberationParams::default(),
        },
        explore: 0.2,
    };
    let bytes = |out: &CurateOutput| {
        let mut buf = Vec::new();
        write_dataset(&out.rows, &mut buf).unwrap();
        buf
    };
    let a = curate(&req).unwrap();
    let b = curate(&req).unwrap();
    let reproducible = bytes(&a) == bytes(&b) && a.report == b.report;
    let deliberated_in_range = a
        .rows
        .iter()
        .filter(|r| r.provenance == Provenance::Deliberated)
        .all(|r| (0.0..=1.0).contains(&r.priority));
    let outside_is_minus_one = a
        .rows
        .iter()
        .filter(|r| r.provenance == Provenance::NonDeliberated)
        .all(|r| r.priority == NON_DELIBERATED_PRIORITY);

    let ctx = DeliberationContext {
        state: "phase 1: pressure 5".into(),
        candidates: (1..=6)
            .map(|k| ScoredAction::new(tsc_core::sim::TimingAction { phase: 1 + k % 2, duration: 5.0 * k as f64 }, -(k as f64)))
            .collect(),
        history: String::new(),
    };
    let panel = DeliberationConfig::mock().build().unwrap();
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let d = rt.block_on(deliberate(&ctx, &panel)).unwrap();
    let all_scored = d.kept.iter().all(|k| d.summary.scores.get(&k.id).is_some_and(|s| (0.0..=1.0).contains(s)));
    outcome(
        reproducible && deliberated_in_range && outside_is_minus_one && all_scored && a.report.non_deliberated > 0,
        format!(
            "reproducible {reproducible}; {} records ({} deliberated in [0,1]: {deliberated_in_range}, \
             {} non-deliberated at -1: {outside_is_minus_one}); every kept candidate scored: {all_scored}",
            a.report.total, a.report.deliberated, a.report.non_deliberated
        ),
    )
}

fn dataset_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let records: Vec<PromptRecord> = (0..1000)
        .map(|i| {
            let p = if rng.gen_bool(0.25) { NON_DELIBERATED_PRIORITY } else { rng.gen::<f64>() };
            let mut r = record(p, i);
            r.prompt = format!("state {}\n\"quoted\" {}", rng.gen::<u32>(), "🚦".repeat(rng.gen_range(0..3)));
            r
        })
        .collect();
    let rows = rows_from_records(&records);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.jsonl");
    export_dataset(&rows, &path).unwrap();
    let back = import_dataset(&path).unwrap();
    let identity = back == rows && back.iter().map(DatasetRow::record).collect::<Vec<_>>() == records;
    let batch = partition_and_weight(&records, &PriorityConfig::default());
    let sums = batch.plus.len() + batch.minus.len() == records.len();
    outcome(
        identity && sums,
        format!("identity {identity}; |D+| {} + |D-| {} = {}", batch.plus.len(), batch.minus.len(), records.len()),
    )
}

fn bench_speed() -> Outcome {
    let r = bench(&BenchRequest::default()).unwrap();
    outcome(
        r.intersections >= 177 && r.ticks >= 3600 && r.wall_seconds < 30.0,
        format!("{} intersections x {} ticks in {:.2} s (limit 30)", r.intersections, r.ticks, r.wall_seconds),
    )
}

fn main() {
    let mut mp = None;
    let results = [
        ("1 baseline ordering on the 3x3 grid", baseline_ordering(&mut mp)),
        ("2 RL assistant vs MaxPressure", assistant_vs_pressure(mp)),
        ("3 duration selection equals exhaustive argmax", duration_selection()),
        ("4 priority fusion extremes and hand example", fusion()),
        ("5 curation loss identities", loss()),
        ("6 phase enumeration equals exhaustive MIS", phase_enumeration()),
        ("7 vehicle conservation and reproducible metrics", conservation_and_determinism()),
        ("8 deliberation reproducibility and scoring", deliberation()),
        ("9 dataset export/import identity", dataset_round_trip()),
        ("10 bench throughput", bench_speed()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
