//! Measures IBE-TLS handshakes and sets them against the certificate-based
//! PQ-TLS cost model.
//!
//! ```bash
//! cargo run --release --example bench_report -- 100 desk
//! ```

use ibetls::cli::bench;
use ibetls::kem::KemParams;
use ibetls::metrics::ReportFormat;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let runs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let params = KemParams::by_name(&args.next().unwrap_or_else(|| "compact".into())).ok_or("unknown parameter set")?;
    let (report, n) = bench(params, 1, runs)?;
    println!("{}", report.render(ReportFormat::Table));
    println!("{n} handshakes");
    Ok(())
}
