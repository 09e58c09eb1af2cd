//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{random_session, tree_text};
use docmux::crdt::TextDoc;
use docmux::doclet::DocletId;
use docmux::relay::{restore, snapshot_hub, DocletHub, RelayConfig};
use docmux::session::{SessionConfig, Strategy};
use docmux::sim::{
    average_per_second, doclet_ids, extrapolate, percentage_decrease, run_scenario, Action, Phase, ScenarioConfig,
    ScenarioResult, SimConfig, Simulation,
};
use docmux::wire::{decode_frame, encode_frame, encode_varint, Frame, Payload};
use itertools::Itertools;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

const EDITORS: [usize; 3] = [1, 2, 4];
const SCENARIO_BUDGET: Duration = Duration::from_secs(5);

fn timed(cfg: &ScenarioConfig) -> Result<ScenarioResult, String> {
    let start = Instant::now();
    let result = run_scenario(cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    if took > SCENARIO_BUDGET {
        return Err(format!(
            "{} E={} {} took {took:?}",
            cfg.strategy, cfg.editors, cfg.phase
        ));
    }
    Ok(result)
}

fn scenario(strategy: Strategy, phase: Phase, editors: usize) -> ScenarioConfig {
    ScenarioConfig {
        strategy,
        phase,
        editors,
        seed: 42,
        ..ScenarioConfig::default()
    }
}

fn reduction(phase: Phase) -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for e in EDITORS {
        let naive = timed(&scenario(Strategy::Naive, phase, e))?;
        let mux = timed(&scenario(Strategy::Mux, phase, e))?;
        let pct = percentage_decrease(naive.extrapolated_5s, mux.extrapolated_5s).map_err(|e| e.to_string())?;
        ok &= pct >= 96.0;
        detail.push(format!(
            "E={e} {}->{} {pct:.2}%",
            naive.extrapolated_5s, mux.extrapolated_5s
        ));
    }
    let detail = detail.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn magnitude() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for e in EDITORS {
        let idle = timed(&scenario(Strategy::Mux, Phase::Idle, e))?.extrapolated_5s;
        ok &= (3.0..=10.0).contains(&idle);
        detail.push(format!("idle E={e} {idle}"));
    }
    let typing = timed(&scenario(Strategy::Mux, Phase::Typing, 1))?.extrapolated_5s;
    ok &= (25.0..=40.0).contains(&typing);
    detail.push(format!("typing E=1 {typing}"));
    let detail = detail.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn monotonicity() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for strategy in [Strategy::Naive, Strategy::Mux] {
        for phase in [Phase::Idle, Phase::Typing] {
            let totals: Vec<f64> = EDITORS
                .iter()
                .map(|&e| timed(&scenario(strategy, phase, e)).map(|r| r.extrapolated_5s))
                .collect::<Result<_, _>>()?;
            ok &= totals.windows(2).all(|w| w[0] <= w[1]);
            detail.push(format!("{strategy}/{phase} {totals:?}"));
        }
    }
    let detail = detail.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn connections() -> Outcome {
    let count = |s| timed(&scenario(s, Phase::Idle, 4)).map(|r| r.connections);
    let (naive, per_socket, mux) = (
        count(Strategy::Naive)?,
        count(Strategy::PerSocket)?,
        count(Strategy::Mux)?,
    );
    let detail = format!("E=4 naive={naive} per-socket={per_socket} mux={mux}");
    if (naive, per_socket, mux) == (1, 4, 1) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn arithmetic() -> Outcome {
    let mean = average_per_second(&[38, 29, 36, 36, 33]).map_err(|e| e.to_string())?;
    let total = extrapolate(mean, 5);
    if (mean - 34.4).abs() > 1e-9 || (total - 172.0).abs() > 1e-9 {
        return Err(format!("mean {mean}, total {total}"));
    }
    let cells = [
        (172.0, 4.0, 97.67),
        (181.0, 5.0, 97.23),
        (210.0, 7.0, 96.66),
        (1638.0, 35.0, 97.86),
        (2094.0, 52.0, 97.51),
    ];
    for (before, after, want) in cells {
        let got = percentage_decrease(before, after).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("({before}, {after}) gave {got}, want {want}"));
        }
    }
    Ok(format!("34.4 -> 172 and {} decrease cells", cells.len()))
}

fn convergence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for trial in 0..1000 {
        let replicas = rng.random_range(2..=4);
        let ops = rng.random_range(1..=200);
        let (docs, log) = random_session(replicas, ops, &mut rng);
        let expected = tree_text(&log);
        for doc in &docs {
            if doc.visible_text() != expected || doc.version() != docs[0].version() || doc.pending_count() != 0 {
                return Err(format!("trial {trial} diverged"));
            }
        }
    }
    let mut permutations = 0u64;
    for size in 1..=6 {
        for _ in 0..25 {
            let (_, log) = random_session(rng.random_range(1..=3), size, &mut rng);
            let expected = tree_text(&log);
            for perm in log.iter().permutations(log.len()) {
                let mut doc = TextDoc::new(99);
                for op in perm {
                    doc.integrate(op.clone()).map_err(|e| e.to_string())?;
                }
                if doc.visible_text() != expected {
                    return Err(format!("delivery order changed the text of {log:?}"));
                }
                permutations += 1;
            }
        }
    }
    let took = start.elapsed();
    if took > Duration::from_secs(60) {
        return Err(format!("took {took:?}"));
    }
    Ok(format!("1000 trials, {permutations} delivery orders, {took:.1?}"))
}

fn routing() -> Outcome {
    let mut sim = Simulation::new(SimConfig {
        strategy: Strategy::Mux,
        users: 3,
        doclets: doclet_ids(4),
        session: SessionConfig::default(),
        relay: RelayConfig::default(),
        latency_ms: 20,
        seed: 42,
    })
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..300 {
        let (at, user) = (rng.random_range(0..5_000), rng.random_range(0..3));
        sim.schedule(at, user, Action::RandomEdit);
    }
    sim.run_until(7_000).map_err(|e| e.to_string())?;
    for (slot, id) in sim.doclets().iter().enumerate() {
        let mut oracle = TextDoc::new(0);
        for op in sim.history(slot) {
            oracle.integrate(op.clone()).map_err(|e| e.to_string())?;
        }
        let expected = oracle.visible_text();
        let relay_text = sim.relay().hub(id).map(|h| h.doclet.doc.visible_text());
        if relay_text.as_deref() != Some(expected.as_str()) {
            return Err(format!("relay copy of {id} differs"));
        }
        for s in sim.sessions() {
            if s.doclet(id).map(|d| d.doc.visible_text()) != Some(expected.clone()) {
                return Err(format!("user {} copy of {id} differs", s.user()));
            }
        }
    }
    let contamination = sim.relay().metrics().contamination;
    if contamination != 0 {
        return Err(format!("contamination {contamination}"));
    }
    Ok("E=4 U=3, 300 edits, 4 doclets match, contamination 0".into())
}

fn codec() -> Outcome {
    let fixed = [
        (Frame::new(None, Payload::Keepalive), vec![0x06, 0x00]),
        (
            Frame::new(Some(DocletId::new("d1").unwrap()), Payload::Subscribe),
            vec![0x01, 0x02, 0x64, 0x31],
        ),
    ];
    for (frame, bytes) in &fixed {
        if encode_frame(frame).ok().as_ref() != Some(bytes) {
            return Err(format!("{frame:?} did not encode to {bytes:02X?}"));
        }
    }
    if encode_varint(300) != [0xAC, 0x02] {
        return Err("varint 300".into());
    }
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&common::frames::frame(), |f| {
            let bytes = encode_frame(&f).expect("valid frame");
            proptest::prop_assert_eq!(decode_frame(&bytes).expect("decodes"), f);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("fixed vectors match, 10000 random frames roundtrip".into())
}

fn snapshots() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for i in 0..100 {
        let mut hub = DocletHub::new(DocletId::new(format!("hub-{i}")).unwrap());
        let ops = rng.random_range(1..=120);
        let (_, log) = random_session(rng.random_range(1..=4), ops, &mut rng);
        for op in log {
            hub.doclet.doc.integrate(op).map_err(|e| e.to_string())?;
        }
        let back = restore(&snapshot_hub(&hub)).map_err(|e| e.to_string())?;
        if back.doclet.doc.visible_text() != hub.doclet.doc.visible_text()
            || back.doclet.doc.version() != hub.doclet.doc.version()
        {
            return Err(format!("hub {i} changed across snapshot"));
        }
    }
    Ok("100 hubs".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("reduction, idle", || reduction(Phase::Idle)),
        ("reduction, typing", || reduction(Phase::Typing)),
        ("magnitude", magnitude),
        ("monotonicity", monotonicity),
        ("connections", connections),
        ("metrics arithmetic", arithmetic),
        ("crdt convergence", convergence),
        ("routing isolation", routing),
        ("codec", codec),
        ("snapshot roundtrip", snapshots),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
