//! Regenerates the committed replica fixture.
//!
//! ```text
//! cargo run --example generate_replica -- crates/core/fixtures/replica
//! ```

use std::path::PathBuf;

use gridprice::sim::write_replica_fixture;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/replica"));
    write_replica_fixture(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
