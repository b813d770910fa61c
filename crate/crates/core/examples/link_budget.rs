//! Link budget for the bundled scenarios, plus a visibility sweep of the
//! atmospheric term.
//!
//! ```bash
//! cargo run --example link_budget
//! ```

use fsqkd::analysis::predict;
use fsqkd::channel::{atmospheric_loss_db, kim_exponent};
use fsqkd::scenario::Scenario;

fn main() {
    println!("{:<24} {:>9} {:>9} {:>7} {:>9} {:>9} {:>9}", "scenario", "geom dB", "atm dB", "extra", "splitter", "link dB", "total dB");
    for name in Scenario::bundled_names() {
        let s = Scenario::bundled(name).unwrap();
        let p = predict(&s).unwrap();
        let l = p.loss;
        println!(
            "{name:<24} {:>9.2} {:>9.2} {:>7.2} {:>9.2} {:>9.2} {:>9.2}",
            l.geometric_db, l.atmospheric_db, l.extra_db, l.splitter_db, l.total_db, p.total_loss_db
        );
    }

    println!("\nattenuation at 850 nm");
    for v in [0.8, 1.5, 2.3, 5.0, 10.0, 23.0, 60.0] {
        println!("  V = {v:>5.1} km  q = {:.3}  {:.3} dB/km", kim_exponent(v), atmospheric_loss_db(v, 850.0, 1000.0).unwrap());
    }
}
