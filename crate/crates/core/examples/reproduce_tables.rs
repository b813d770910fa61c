//! Runs every bundled scenario at full length (10⁹ pulses each) and sets
//! the simulated figures beside the recorded ones.
//!
//! ```bash
//! cargo run --release --example reproduce_tables
//! ```

use std::time::Instant;

use fsqkd::protocol::session::{run_in_process, QuantumInput};
use fsqkd::scenario::Scenario;

fn main() {
    println!(
        "{:<24} {:>12} {:>12} {:>10} {:>10} {:>8}",
        "scenario", "kbit/s rec", "kbit/s sim", "QBER rec", "QBER sim", "wall s"
    );
    for name in Scenario::bundled_names() {
        let s = Scenario::bundled(name).unwrap();
        let rec = &s.metadata.reported;
        let t0 = Instant::now();
        let (_, bob) = run_in_process(&s, &s, QuantumInput::CoSimulate);
        let r = bob.unwrap().report;
        println!(
            "{name:<24} {:>12.1} {:>12.2} {:>9.1}% {:>9.2}% {:>8.1}",
            rec.raw_key_rate_kbps.unwrap_or(f64::NAN),
            r.sifted_key_rate_bps / 1e3,
            rec.qber_percent.unwrap_or(f64::NAN),
            r.qber.map_or(f64::NAN, |q| q.qber * 100.0),
            t0.elapsed().as_secs_f64()
        );
    }
}
