//! Recovers Alice's clock from Bob's raw tags alone and shows the folded
//! arrival histogram before and after drift correction.
//!
//! ```bash
//! cargo run --release --example clock_recovery -- [drift_ppm] [offset_ps]
//! ```

use fsqkd::scenario::Scenario;
use fsqkd::simulate::{assignment_accuracy, bob_process, ground_truth_clock, simulate_quantum_phase};
use fsqkd::sync::{fold_histogram, fold_residuals, TrueClock};

fn bar(counts: &[u64]) -> String {
    let max = *counts.iter().max().unwrap_or(&1) as f64;
    counts.iter().map(|&c| [' ', '.', ':', '-', '=', '+', '*', '#'][((c as f64 / max) * 7.0).round() as usize]).collect()
}

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<f64>().expect("number"));
    let drift_ppm = args.next().unwrap_or(20.0);
    let offset_ps = args.next().unwrap_or(123_456.0);

    let mut s = Scenario::bundled("table2_beam_expanders").unwrap().with_duration(0.5);
    s.sync.true_clock = TrueClock { offset_ps, drift_ppm };
    let q = simulate_quantum_phase(&s).unwrap();
    let tags = q.tags();
    let period = 1e12 / s.source.rep_rate_hz;

    println!("{} tags; folded at the nominal period:", tags.len());
    println!("  |{}|", bar(&fold_histogram(&tags, period, 80).unwrap().counts));

    let view = bob_process(&tags, &s).unwrap();
    let truth = ground_truth_clock(&s);
    println!("recovered: drift {:+.3} ppm, offset {:.1} ps, residual rms {:.1} ps", view.clock.drift_ppm, view.clock.offset_ps, view.clock.residual_rms_ps);
    println!("truth:     drift {:+.3} ppm, offset {:.1} ps", truth.drift_ppm, truth.offset_ps);
    println!("folded on the recovered clock:");
    println!("  |{}|", bar(&fold_residuals(&tags, &view.clock, 80).counts));

    let acc = assignment_accuracy(&q.events, &view.clock, &s);
    println!(
        "gate {} ps accepted {} of {} tags; {} of {} accepted signal tags on the right pulse ({:.4}%)",
        s.sync.gate_width_ps,
        view.stats.accepted,
        view.stats.tags,
        acc.correct,
        acc.signal_accepted,
        acc.fraction() * 100.0
    );
}
