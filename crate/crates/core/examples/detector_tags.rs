//! Channel plus four-detector receiver on a short burst: how many photons
//! survive, how many tags the detectors produce and where they come from.
//!
//! ```bash
//! cargo run --release --example detector_tags
//! ```

use fsqkd::scenario::Scenario;
use fsqkd::simulate::simulate_quantum_phase;
use fsqkd::source::Polarization;

fn main() {
    let s = Scenario::bundled("table2_beam_expanders").unwrap().with_duration(0.1);
    let q = simulate_quantum_phase(&s).unwrap();
    let st = &q.stats;
    println!("{} pulses, {} non-vacuum, {} photons emitted", q.n_pulses, st.nonvacuum_pulses, st.photons_emitted);
    println!("{} photons reached the receiver", st.photons_arrived);
    println!(
        "{} signal tags, {} background tags, {} lost to dead time",
        st.signal_tags, st.background_tags, st.dead_time_dropped
    );

    for d in Polarization::ALL {
        let (mut sig, mut bg) = (0, 0);
        for e in q.events.iter().filter(|e| e.tag.detector == d) {
            if e.origin.is_some() {
                sig += 1;
            } else {
                bg += 1;
            }
        }
        println!("  APD {d:?}: {sig} signal, {bg} background");
    }

    println!("\nfirst tags:");
    for e in q.events.iter().take(10) {
        let origin = e.origin.map_or("background".to_string(), |i| format!("pulse {i}"));
        println!("  {:>12} ps  {:?}  {origin}", e.tag.time_ps, e.tag.detector);
    }
}
