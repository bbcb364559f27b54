//! Regenerates the seeded CSV fixtures under `tests/fixtures`.
//!
//! ```text
//! cargo run -p dpdmon --example make_fixtures
//! ```

use std::fmt::Write as _;
use std::path::Path;

use dpdmon::simlab::{simulate_garch_path, simulate_regime_switch};
use dpdmon::GarchParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn write(dir: &Path, name: &str, header: &str, values: &[f64]) {
    let mut s = format!("# seeded simulation, see examples/make_fixtures.rs\n{header}\n");
    for v in values {
        writeln!(s, "{v:?}").unwrap();
    }
    std::fs::write(dir.join(name), s).unwrap();
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    std::fs::create_dir_all(&dir).unwrap();
    let t0 = GarchParams::new(0.2, &[0.2], &[0.6]).unwrap();
    let t3 = GarchParams::new(0.5, &[0.2], &[0.6]).unwrap();

    let clean = simulate_garch_path(&t0, 1000, 500, &mut ChaCha8Rng::seed_from_u64(101)).unwrap();
    write(&dir, "garch_clean.csv", "value", &clean);

    // one stream: the shifted path shares the first 1250 values with the clean one
    let base = simulate_garch_path(&t0, 2000, 500, &mut ChaCha8Rng::seed_from_u64(202)).unwrap();
    let shift = simulate_regime_switch(&t0, &t3, 1250, 750, 500, &mut ChaCha8Rng::seed_from_u64(202)).unwrap();
    assert_eq!(base[..1250], shift[..1250]);
    write(&dir, "monitor_hist.csv", "value", &base[..1000]);
    write(&dir, "monitor_stream_clean.csv", "value", &base[1000..]);
    write(&dir, "monitor_stream_shift.csv", "value", &shift[1000..]);

    let change = simulate_regime_switch(&t0, &t3, 500, 500, 500, &mut ChaCha8Rng::seed_from_u64(303)).unwrap();
    write(&dir, "retro_change.csv", "value", &change);

    let mut prices = vec![100.0];
    for r in &clean[..200] {
        let last = *prices.last().unwrap();
        prices.push(last * (r / 100.0).exp());
    }
    let mut s = String::from("date,close\n");
    for (i, p) in prices.iter().enumerate() {
        writeln!(s, "day{:04},{p:?}", i + 1).unwrap();
    }
    std::fs::write(dir.join("prices.csv"), s).unwrap();

    std::fs::write(dir.join("malformed.csv"), "value\n0.5\n-1.25\n0.75x\n1.0\n").unwrap();
}
