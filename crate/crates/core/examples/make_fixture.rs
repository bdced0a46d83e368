//! Regenerates the bundled synthetic corpus.
//!
//! `cargo run -p sero-core --example make_fixture -- [dir] [seed]`

use sero_core::corpus::write_corpus;
use sero_core::pipeline::Config;
use sero_core::synthetic::fixture_corpus;
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fixtures/synthetic".into()));
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20210731);

    let (corpus, truth) = fixture_corpus(seed);
    write_corpus(&corpus, &dir.join("data"))?;
    std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&truth)? + "\n")?;
    let config = Config::example_json("data", "out");
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
    println!("wrote {}", dir.display());
    Ok(())
}
