//! Weak coherent pulse train: per-state photon statistics and emission times.
//!
//! ```bash
//! cargo run --release --example pulse_train
//! ```

use fsqkd::source::{build_pulse_train, Polarization, PulseTrain, SourceConfig};

fn main() {
    let config = SourceConfig { mu_per_state: [0.08, 0.02, 0.08, 0.08], rng_seed: 42, ..Default::default() };
    let n = 10_000_000;
    let train = PulseTrain::new(config.clone(), n).unwrap();

    let mut pulses = [0u64; 4];
    let mut photons = [0u64; 4];
    let mut multi = 0u64;
    for shard in 0..train.shard_count() {
        for p in train.shard_emissions(shard) {
            photons[p.state().index()] += p.photon_count as u64;
            multi += (p.photon_count > 1) as u64;
        }
    }
    for i in 0..n {
        pulses[train.state(i).index()] += 1;
    }

    println!("{n} pulses at {:.0} MHz, period {} ps", config.rep_rate_hz / 1e6, train.period_ps());
    println!("state  pulses     mean photons  configured mu");
    for s in Polarization::ALL {
        let i = s.index();
        println!("{s:?}      {:<10} {:<13.5} {}", pulses[i], photons[i] as f64 / pulses[i] as f64, config.mu(s));
    }
    println!("multi-photon pulses: {multi}");

    println!("\nfirst pulses (index, state, photons, emit time ps):");
    for p in build_pulse_train(&config, 8).unwrap() {
        println!("  {:>2} {:?} {} {}", p.index, p.state(), p.photon_count, p.emit_time_ps);
    }
}
