//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion straight to stderr (bypassing the harness capture) and then
//! asserts it.

use std::io::Write;
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread;
use std::time::{Duration, Instant};

use fsqkd::analysis::{compare_values, predict, Tolerances};
use fsqkd::channel::atmospheric_loss_db;
use fsqkd::protocol::session::{run_in_process, run_session, QuantumInput, SessionResult};
use fsqkd::protocol::transport::{tcp_accept, tcp_connect};
use fsqkd::protocol::wire::{
    decode_frame, encode_frame, AbortNotice, AbortReason, DetectionReport, Hello, MatchMask, Message, QberReport, Role,
    SampleFraction, SessionParams, SessionPhase, HEADER_LEN, TRAILER_LEN,
};
use fsqkd::report::SessionReport;
use fsqkd::rng::stream_rng;
use fsqkd::scenario::Scenario;
use fsqkd::simulate::{assignment_accuracy, bob_process, simulate_quantum_phase};
use fsqkd::source::Basis;
use fsqkd::sync::TrueClock;
use rand::Rng;

// Pinned tolerances.
const C1_RATE_BPS: f64 = 13_800.0;
const C1_RATE_REL: f64 = 0.15;
const C1_QBER: f64 = 0.019;
const C1_QBER_ABS: f64 = 0.004;
const C1_MAX_RUNTIME_S: f64 = 300.0;
const C2_QBER: f64 = 0.083;
const C2_QBER_ABS: f64 = 0.010;
const C2_RATE_BPS: f64 = 1_400.0;
const C2_RATE_REL: f64 = 0.25;
const C3_QBER: f64 = 0.041;
const C3_QBER_ABS: f64 = 0.008;
const C3_RATE_BPS: f64 = 8_600.0;
const C3_RATE_REL: f64 = 0.25;
const C4_MIN_PULSES: u64 = 10_000_000;
const C4_PULSES: u64 = 100_000_000;
const C4_SIGMAS: f64 = 3.0;
const C5_SEEDS: u64 = 100;
const C6_RUNS: u64 = 100;
const C6_HIGH_QBER: f64 = 0.12;
const C6_LOW_QBER: f64 = 0.08;
const C7_MIN_ACCURACY: f64 = 0.999;
const C8_MESSAGES: usize = 100_000;
const C8_FUZZ_INPUTS: usize = 1_000_000;
const C9_DB_PER_KM: f64 = 0.96;
const C9_ABS: f64 = 0.02;

fn verdict(id: u32, pass: bool, detail: &str) {
    let line = format!("acceptance criterion {id}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn run(s: &Scenario) -> (SessionResult, SessionResult) {
    let (a, b) = run_in_process(s, s, QuantumInput::CoSimulate);
    (a.expect("alice"), b.expect("bob"))
}

fn measured(r: &SessionReport) -> (f64, f64) {
    (r.sifted_key_rate_bps, r.qber.map_or(f64::NAN, |q| q.qber))
}

fn table_run(name: &str) -> (SessionReport, f64) {
    let s = Scenario::bundled(name).unwrap();
    assert!(s.n_pulses() >= 1_000_000_000);
    let t0 = Instant::now();
    let (_, bob) = run(&s);
    (bob.report, t0.elapsed().as_secs_f64())
}

#[test]
fn criterion_1_beam_expanders() {
    let (r, wall) = table_run("table2_beam_expanders");
    let (rate, qber) = measured(&r);
    let pass = r.completed()
        && r.duration_s >= 10.0
        && (rate / C1_RATE_BPS - 1.0).abs() <= C1_RATE_REL
        && (qber - C1_QBER).abs() <= C1_QBER_ABS
        && wall <= C1_MAX_RUNTIME_S;
    verdict(
        1,
        pass,
        &format!("{} pulses, rate {rate:.1} bit/s, QBER {:.3}%, {wall:.1} s wall", r.n_pulses, qber * 100.0),
    );
    assert!(pass);
}

#[test]
fn criterion_2_collimators() {
    let (r, _) = table_run("table2_collimators");
    let (rate, qber) = measured(&r);
    let pass = r.completed() && (qber - C2_QBER).abs() <= C2_QBER_ABS && (rate / C2_RATE_BPS - 1.0).abs() <= C2_RATE_REL;
    verdict(2, pass, &format!("{}, rate {rate:.1} bit/s, QBER {:.3}%", r.outcome.label(), qber * 100.0));
    assert!(pass);
}

#[test]
fn criterion_3_retro_run1() {
    let (r, _) = table_run("table1_run1");
    let (rate, qber) = measured(&r);
    let pass = r.completed() && (qber - C3_QBER).abs() <= C3_QBER_ABS && (rate / C3_RATE_BPS - 1.0).abs() <= C3_RATE_REL;
    verdict(3, pass, &format!("{}, rate {rate:.1} bit/s, QBER {:.3}%", r.outcome.label(), qber * 100.0));
    assert!(pass);
}

fn randomized_scenario(i: u64) -> Scenario {
    let mut rng = stream_rng(0xC4, 0, i);
    let mut s = Scenario::bundled("table2_beam_expanders").unwrap().with_seed(rng.random());
    s.metadata.name = format!("randomized_{i}");
    let mu = rng.random_range(0.05..0.4);
    s.source.mu_per_state = [mu, mu * rng.random_range(0.3..1.0), mu, mu];
    s.channel.distance_m = rng.random_range(100.0..1500.0);
    s.channel.visibility_km = rng.random_range(2.0..30.0);
    s.channel.extra_loss_db = rng.random_range(0.0..6.0);
    s.channel.fading_sigma = rng.random_range(0.0..0.3);
    s.receiver.background_rate_cps_per_apd = rng.random_range(200.0..5000.0);
    s.receiver.misalignment_deg = rng.random_range(0.0..8.0);
    s.receiver.jitter_fwhm_ps = rng.random_range(100.0..500.0);
    s.sync.gate_width_ps = rng.random_range(300.0..1200.0);
    s.sync.true_clock = TrueClock { offset_ps: rng.random_range(-1e6..1e6), drift_ppm: rng.random_range(-20.0..20.0) };
    s
}

#[test]
fn criterion_4_oracle_equivalence() {
    let tol = Tolerances { rate_rel: 0.0, qber_abs: 0.0, sigma_floor: C4_SIGMAS };
    let duration = C4_PULSES as f64 / 1e8;
    let mut scenarios: Vec<Scenario> =
        Scenario::bundled_names().map(|n| Scenario::bundled(n).unwrap().with_duration(duration)).collect();
    scenarios.extend((0..3).map(|i| randomized_scenario(i).with_duration(duration)));
    let mut pass = true;
    let mut lines = Vec::new();
    for s in &scenarios {
        assert!(s.n_pulses() >= C4_MIN_PULSES);
        let p = predict(s).unwrap();
        let (_, bob) = run(s);
        let (rate, qber) = measured(&bob.report);
        let dev = compare_values(&p, rate, qber, &tol);
        let ok = bob.report.completed() && dev.failing().next().is_none();
        pass &= ok;
        lines.push(format!(
            "{} {}: rate {rate:.0}/{:.0}±{:.0}, qber {:.4}/{:.4}±{:.4}",
            s.metadata.name,
            if ok { "ok" } else { "off" },
            p.sifted_rate_bps,
            C4_SIGMAS * p.sifted_rate_sigma_bps,
            qber,
            p.qber_total,
            C4_SIGMAS * p.qber_sigma
        ));
    }
    verdict(4, pass, &lines.join("; "));
    assert!(pass);
}

fn noiseless(name: &str, seed: u64) -> Scenario {
    let mut s = Scenario::bundled(name).unwrap().with_seed(seed);
    s.receiver.background_rate_cps_per_apd = 0.0;
    s.receiver.misalignment_deg = 0.0;
    s.receiver.jitter_fwhm_ps = 0.0;
    s.channel.retro_flip_probability = 0.0;
    // Enough signal tags for clock recovery.
    let rate = predict(&s).unwrap().sifted_rate_bps;
    let d = (4000.0 / rate).max(0.05);
    s.with_duration(d)
}

#[test]
fn criterion_5_noiseless_invariant() {
    let names: Vec<&str> = Scenario::bundled_names().collect();
    let mut bad = Vec::new();
    let mut bits = 0;
    for seed in 0..C5_SEEDS {
        let s = noiseless(names[seed as usize % names.len()], seed);
        let (a, b) = run(&s);
        let q = b.report.qber;
        let ok = b.report.completed() && q.is_some_and(|q| q.error_count == 0 && q.qber == 0.0) && a.key == b.key && !b.key.is_empty();
        bits += b.key.len();
        if !ok {
            bad.push(format!("seed {seed}: {} {:?}", b.report.outcome.label(), q));
        }
    }
    let pass = bad.is_empty();
    verdict(5, pass, &format!("{C5_SEEDS} seeds, {bits} sifted bits total, failures: {bad:?}"));
    assert!(pass);
}

/// Low-loss link with misalignment tuned so the predicted QBER hits `target`.
fn engineered(target: f64) -> Scenario {
    let mut s = Scenario::bundled("table2_beam_expanders").unwrap().with_duration(0.1);
    s.channel.extra_loss_db = 0.0;
    let (mut lo, mut hi) = (0.0, 45.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        s.receiver.misalignment_deg = mid;
        if predict(&s).unwrap().qber_total < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    s.receiver.misalignment_deg = 0.5 * (lo + hi);
    s
}

fn abort_count(base: &Scenario) -> (u64, f64) {
    let mut aborts = 0;
    let mut qber_sum = 0.0;
    for seed in 0..C6_RUNS {
        let s = base.clone().with_seed(1000 + seed);
        let (_, b) = run(&s);
        let q = b.report.qber.expect("qber measured");
        qber_sum += q.qber;
        aborts += (b.report.outcome.abort_reason() == Some(AbortReason::QberAboveThreshold)) as u64;
    }
    (aborts, qber_sum / C6_RUNS as f64)
}

#[test]
fn criterion_6_abort_rule() {
    let (high, low) = (engineered(C6_HIGH_QBER), engineered(C6_LOW_QBER));
    let (high_aborts, high_mean) = abort_count(&high);
    let (low_aborts, low_mean) = abort_count(&low);
    let pass = high_aborts == C6_RUNS
        && low_aborts == 0
        && (high_mean - C6_HIGH_QBER).abs() <= 0.01
        && (low_mean - C6_LOW_QBER).abs() <= 0.01;
    verdict(
        6,
        pass,
        &format!(
            "12% scenario (mean {:.2}%): {high_aborts}/{C6_RUNS} aborted; 8% scenario (mean {:.2}%): {low_aborts}/{C6_RUNS} aborted",
            high_mean * 100.0,
            low_mean * 100.0
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_clock_recovery() {
    let mut rng = stream_rng(0xC7, 0, 0);
    let mut worst = 1.0f64;
    let mut runs = Vec::new();
    for name in ["table2_beam_expanders", "table2_collimators"] {
        for drift in [-20.0, 0.0, 20.0] {
            for _ in 0..3 {
                let mut s = Scenario::bundled(name).unwrap().with_seed(rng.random()).with_duration(0.5);
                let offset = rng.random_range(-5e6..5e6);
                s.sync.true_clock = TrueClock { offset_ps: offset, drift_ppm: drift };
                let q = simulate_quantum_phase(&s).unwrap();
                let acc = match bob_process(&q.tags(), &s) {
                    Ok(view) => assignment_accuracy(&q.events, &view.clock, &s).fraction(),
                    Err(_) => 0.0,
                };
                worst = worst.min(acc);
                runs.push(format!("{name} {drift:+} ppm {offset:.0} ps: {:.5}", acc));
            }
        }
    }
    let mut dark = Scenario::bundled("table2_beam_expanders").unwrap().with_duration(1.0);
    dark.source.mu_per_state = [0.0; 4];
    let tags = simulate_quantum_phase(&dark).unwrap().tags();
    let dark_fails = bob_process(&tags, &dark).is_err();
    let (_, b) = run(&dark);
    let session_fails = b.report.outcome.abort_reason() == Some(AbortReason::SyncFailure);
    let pass = worst >= C7_MIN_ACCURACY && dark_fails && session_fails;
    verdict(
        7,
        pass,
        &format!(
            "worst assignment accuracy {worst:.5} over {} runs; background-only: recovery fails {dark_fails}, session aborts {session_fails}",
            runs.len()
        ),
    );
    assert!(pass, "{runs:#?}");
}

fn random_message<R: Rng>(rng: &mut R, kind: usize) -> Message {
    let n = rng.random_range(0..200usize);
    let bits = |rng: &mut R| (0..n).map(|_| rng.random::<bool>()).collect::<Vec<bool>>();
    let role = if rng.random() { Role::Alice } else { Role::Bob };
    match kind % 9 {
        0 => Message::Hello(Hello { role, session_id: rng.random(), scenario_hash: rng.random() }),
        1 => Message::SessionParams(SessionParams {
            session_id: rng.random(),
            n_pulses: rng.random(),
            qber_abort_threshold: rng.random(),
            sample_fraction: if rng.random() { SampleFraction::All } else { SampleFraction::Fraction(rng.random()) },
            rng_seed: rng.random(),
        }),
        2 => Message::DetectionReport(DetectionReport {
            entries: (0..n).map(|_| (rng.random(), Basis::from_bit(rng.random()))).collect(),
        }),
        3 => Message::MatchMask(MatchMask { keep: bits(rng) }),
        4 => Message::SampleIndices((0..n).map(|_| rng.random()).collect()),
        5 => Message::SampleBits(bits(rng)),
        6 => {
            let d: u64 = rng.random_range(0..1_000_000);
            let mut q = QberReport::new(d, rng.random_range(0..=d), rng.random());
            q.abort = rng.random();
            Message::QberResult(q)
        }
        7 => Message::Abort(AbortNotice {
            reason: [
                AbortReason::ParameterMismatch,
                AbortReason::ProtocolViolation,
                AbortReason::QberAboveThreshold,
                AbortReason::SyncFailure,
                AbortReason::Inconclusive,
                AbortReason::PeerError,
            ][rng.random_range(0..6)],
            phase: SessionPhase::QberExchange,
            detail: (0..rng.random_range(0..40)).map(|_| rng.random_range('a'..='z')).collect(),
        }),
        _ => Message::Done { sifted_len: rng.random() },
    }
}

fn fuzz_input<R: Rng>(rng: &mut R, seeds: &[Vec<u8>], i: usize) -> Vec<u8> {
    match i % 4 {
        0 => {
            let mut v = vec![0u8; rng.random_range(0..64)];
            rng.fill_bytes(&mut v);
            v
        }
        1 => {
            let mut v = seeds[rng.random_range(0..seeds.len())].clone();
            let cut = rng.random_range(0..=v.len());
            v.truncate(cut);
            v
        }
        _ => {
            // Mutate a valid frame and reseal it so the payload parser runs.
            let mut v = seeds[rng.random_range(0..seeds.len())].clone();
            for _ in 0..rng.random_range(1..4) {
                let at = rng.random_range(HEADER_LEN.min(v.len() - 1)..v.len());
                v[at] = rng.random();
            }
            if i % 4 == 3 && v.len() >= HEADER_LEN + TRAILER_LEN {
                let body_end = v.len() - TRAILER_LEN;
                let crc = crc32fast::hash(&v[..body_end]);
                v[body_end..].copy_from_slice(&crc.to_le_bytes());
            }
            v
        }
    }
}

fn tcp_vs_in_process(s: &Scenario) -> bool {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let sa = s.clone();
    let alice = thread::spawn(move || {
        let mut t = tcp_accept(&listener, Duration::from_secs(10), Some(Duration::from_secs(120))).unwrap();
        run_session(Role::Alice, &mut t, &sa, QuantumInput::CoSimulate).unwrap()
    });
    let mut t = tcp_connect(&addr, Duration::from_secs(10), Some(Duration::from_secs(120))).unwrap();
    let bob = run_session(Role::Bob, &mut t, s, QuantumInput::CoSimulate).unwrap();
    let alice = alice.join().unwrap();
    let (a_mem, b_mem) = run(s);
    bob.report.completed() && bob.report.to_json() == b_mem.report.to_json() && alice.report.to_json() == a_mem.report.to_json()
}

#[test]
fn criterion_8_wire_protocol() {
    let mut rng = stream_rng(0xC8, 0, 0);
    let mut mismatches = 0;
    let mut seeds = Vec::new();
    for i in 0..C8_MESSAGES {
        let m = random_message(&mut rng, i);
        let f = encode_frame(&m);
        match decode_frame(&f) {
            Ok((back, used)) if back == m && used == f.len() => {}
            _ => mismatches += 1,
        }
        if i < 900 {
            seeds.push(f);
        }
    }
    let mut panics = 0;
    let mut accepted = 0;
    for i in 0..C8_FUZZ_INPUTS {
        let input = fuzz_input(&mut rng, &seeds, i);
        match catch_unwind(AssertUnwindSafe(|| decode_frame(&input))) {
            Ok(Ok((m, used))) => {
                accepted += 1;
                // Anything accepted must re-encode to the bytes consumed.
                if encode_frame(&m) != input[..used] {
                    mismatches += 1;
                }
            }
            Ok(Err(_)) => {}
            Err(_) => panics += 1,
        }
    }
    let s = Scenario::bundled("table2_beam_expanders").unwrap().with_duration(0.2);
    let identical = tcp_vs_in_process(&s);
    let pass = mismatches == 0 && panics == 0 && identical;
    verdict(
        8,
        pass,
        &format!(
            "{C8_MESSAGES} messages, {mismatches} mismatches; {C8_FUZZ_INPUTS} fuzz inputs, {panics} panics, {accepted} accepted; loopback report identical {identical}"
        ),
    );
    assert!(pass);
}

/// Kim visibility model written out by hand.
fn kim_db_per_km(v_km: f64, lambda_nm: f64) -> f64 {
    let q = match v_km {
        v if v > 50.0 => 1.6,
        v if v > 6.0 => 1.3,
        v if v > 1.0 => 0.16 * v + 0.34,
        v if v > 0.5 => v - 0.5,
        _ => 0.0,
    };
    let beta = 3.91 / v_km * (lambda_nm / 550.0).powf(-q);
    10.0 * std::f64::consts::E.log10() * beta
}

#[test]
fn criterion_9_atmospheric_model() {
    let model = atmospheric_loss_db(10.0, 850.0, 1000.0).unwrap();
    let hand = kim_db_per_km(10.0, 850.0);
    let pass = (model - C9_DB_PER_KM).abs() <= C9_ABS && (model - hand).abs() < 1e-9;
    verdict(9, pass, &format!("model {model:.4} dB/km, hand computation {hand:.4} dB/km"));
    assert!(pass);
}
