//! Cascading and independent weight randomization, scored with Spearman
//! rank correlation and HOG similarity against the trained map.
//!
//! cargo run --release --example sanity_check -- [weights.lisw] [seeds]

use lisaliency::io::{preprocess, render_scene, RunConfig};
use lisaliency::network::{NetworkSpec, NetworkWeights};
use lisaliency::sanity::{run_randomization_test, RandomizationMode, RandomizationPlan};

fn main() -> lisaliency::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = RunConfig::reference();
    let spec = NetworkSpec::mini_vgg();
    let weights = match args.next() {
        Some(p) => NetworkWeights::load(p, &spec)?,
        None => NetworkWeights::init(&spec, cfg.seed),
    };
    let seeds: u64 = args.next().map(|s| s.parse().expect("seeds must be an integer")).unwrap_or(3);
    let image = preprocess(&render_scene(cfg.seed, 1, 0, &cfg.dataset).image, &cfg.preprocess)?;

    for mode in [RandomizationMode::Cascading, RandomizationMode::Independent] {
        let mut rows: Vec<(String, f64, f64)> = Vec::new();
        for s in 0..seeds {
            let plan = RandomizationPlan::new(&spec, mode, cfg.seed + s);
            for r in run_randomization_test(&spec, &weights, &image, &plan, &cfg.saliency)? {
                if rows.len() <= r.stage {
                    rows.push((r.layer_name.clone(), 0.0, 0.0));
                }
                rows[r.stage].1 += r.spearman / seeds as f64;
                rows[r.stage].2 += r.hog_pearson / seeds as f64;
            }
        }
        println!("{mode} ({seeds} seeds)");
        println!("  stage  layer      spearman  hog");
        for (stage, (layer, sp, hog)) in rows.iter().enumerate() {
            println!("  {stage:>5}  {layer:<9} {sp:>9.3} {hog:>6.3}");
        }
    }
    Ok(())
}
