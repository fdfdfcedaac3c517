//! Epoch rotation with a one-epoch window, and an emergency revocation in
//! the middle of it.
//!
//! ```bash
//! cargo run --example epoch_rotation
//! ```

use ibetls::kem::KemParams;
use ibetls::simnet::rotate_epoch_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = rotate_epoch_scenario("ibe.example/rotation", 5, KemParams::compact())?;
    for c in &report.checks {
        let got = if c.ok { "connects" } else { "fails" };
        let want = if c.expected_ok { "connects" } else { "fails" };
        println!("{:<40} {got:<9} (expected {want})", c.name);
    }
    println!("all as expected: {}", report.passed());
    Ok(())
}
