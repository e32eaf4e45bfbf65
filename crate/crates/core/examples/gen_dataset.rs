//! Writes the shapes-on-scenes corpus.
//!
//! cargo run --release --example gen_dataset -- [out_dir] [seed]

use lisaliency::io::{generate_dataset, Dataset, DatasetConfig, SHAPES, SPLITS};

fn main() -> lisaliency::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "desk_corpus".into());
    let seed = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(7);

    let summary = generate_dataset(&out, seed, &DatasetConfig::default())?;
    for (split, n) in SPLITS.iter().zip(summary.counts) {
        println!("{split:>12}: {n} images");
    }

    let test = Dataset::open(format!("{out}/test"))?;
    for e in test.entries().iter().take(8) {
        let b = e.bbox;
        println!("{}  {:<8} box ({}, {}) {}x{}", e.filename, SHAPES[e.label], b.x, b.y, b.w, b.h);
    }
    Ok(())
}
