//! Regenerates the checked-in family-selector weight file:
//! `cargo run -p corag --example write_agent_fixture -- <path>`.

use std::path::PathBuf;

use corag::instances::family_selector_fixture;

const ITERATIONS: u32 = 50;
const LAMBDA: f64 = 0.1;

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("crates/core/tests/fixtures/family_selector.json"));
    let weights = family_selector_fixture(ITERATIONS, LAMBDA);
    weights.save(&path).expect("write weight file");
    println!("wrote {}", path.display());
}
