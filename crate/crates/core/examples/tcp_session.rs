//! Alice and Bob as separate endpoints over a loopback TCP socket.
//!
//! ```bash
//! cargo run --release --example tcp_session
//! ```

use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use fsqkd::protocol::session::{run_session, QuantumInput};
use fsqkd::protocol::transport::{tcp_accept, tcp_connect, Recording};
use fsqkd::protocol::wire::Role;
use fsqkd::scenario::Scenario;

fn main() {
    let s = Scenario::bundled("table2_beam_expanders").unwrap().with_duration(0.5);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    println!("alice listening on {addr}");

    let sa = s.clone();
    let alice = thread::spawn(move || {
        let t = tcp_accept(&listener, Duration::from_secs(10), Some(Duration::from_secs(60))).unwrap();
        let mut t = Recording::new(t);
        let r = run_session(Role::Alice, &mut t, &sa, QuantumInput::CoSimulate).unwrap();
        (r, t.sent_types())
    });

    let mut t = Recording::new(tcp_connect(&addr, Duration::from_secs(10), Some(Duration::from_secs(60))).unwrap());
    let bob = run_session(Role::Bob, &mut t, &s, QuantumInput::CoSimulate).unwrap();
    let (alice, alice_sent) = alice.join().unwrap();

    println!("alice sent {alice_sent:?}");
    println!("bob sent   {:?}", t.sent_types());
    for r in [&alice.report, &bob.report] {
        println!(
            "{:?}: {} | sifted {} | qber {:.2}% | key {}",
            r.role,
            r.outcome.label(),
            r.sifted_bits,
            r.qber.map_or(f64::NAN, |q| q.qber * 100.0),
            r.sifted_key_sha256.as_deref().unwrap_or("-")
        );
    }
}
