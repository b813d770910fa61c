//! Full two-party session in one process over the in-memory transport,
//! printing Bob's report.
//!
//! ```bash
//! cargo run --release --example loopback_session -- [scenario] [seconds]
//! ```

use fsqkd::protocol::session::{run_in_process, QuantumInput};
use fsqkd::scenario::Scenario;

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "table1_run1".into());
    let seconds: f64 = args.next().map_or(1.0, |a| a.parse().expect("seconds"));
    let s = Scenario::load(&name).unwrap().with_duration(seconds);

    let (alice, bob) = run_in_process(&s, &s, QuantumInput::CoSimulate);
    let (alice, bob) = (alice.unwrap(), bob.unwrap());
    print!("{}", bob.report.to_json());

    let errors = alice.key.bits.iter().zip(&bob.key.bits).filter(|(a, b)| a != b).count();
    println!("# {} sifted bits, {errors} differ between Alice and Bob", bob.key.len());
}
