//! Analytic prediction against the Monte-Carlo session, with the 3σ bounds
//! used by the deviation check.
//!
//! ```bash
//! cargo run --release --example predict_vs_monte_carlo -- [seconds]
//! ```

use fsqkd::analysis::{compare, predict, Tolerances};
use fsqkd::protocol::session::{run_in_process, QuantumInput};
use fsqkd::scenario::Scenario;

fn main() {
    let seconds: f64 = std::env::args().nth(1).map_or(1.0, |a| a.parse().expect("seconds"));
    let tol = Tolerances { rate_rel: 0.0, qber_abs: 0.0, sigma_floor: 3.0 };
    println!(
        "{:<24} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8}",
        "scenario", "rate pred", "rate MC", "±3σ", "qber %", "MC %", "±3σ"
    );
    for name in Scenario::bundled_names() {
        let s = Scenario::bundled(name).unwrap().with_duration(seconds);
        let p = predict(&s).unwrap();
        let (_, bob) = run_in_process(&s, &s, QuantumInput::CoSimulate);
        let r = bob.unwrap().report;
        let dev = compare(&p, &r, &tol).unwrap();
        let ok = dev.failing().next().is_none();
        println!(
            "{name:<24} {:>10.1} {:>10.1} {:>8.1} {:>8.3} {:>8.3} {:>8.3} {}",
            p.sifted_rate_bps,
            r.sifted_key_rate_bps,
            3.0 * p.sifted_rate_sigma_bps,
            p.qber_total * 100.0,
            r.qber.map_or(f64::NAN, |q| q.qber * 100.0),
            3.0 * p.qber_sigma * 100.0,
            if ok { "ok" } else { "OUTSIDE" }
        );
    }
}
