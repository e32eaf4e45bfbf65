//! Blurs the background or the foreground of each image, as split by its
//! thresholded saliency map, and reports top-1/top-5 accuracy.
//!
//! cargo run --release --example blur_experiment -- weights.lisw desk_corpus/test [limit]

use lisaliency::experiments::{load_labeled, run_blur_experiment, NetworkModel};
use lisaliency::io::{Dataset, RunConfig};
use lisaliency::network::{NetworkSpec, NetworkWeights};

fn main() -> lisaliency::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: blur_experiment <weights.lisw> <labelled image dir> [limit]");
        std::process::exit(2);
    }
    let cfg = RunConfig::reference();
    let spec = NetworkSpec::mini_vgg();
    let weights = NetworkWeights::load(&args[0], &spec)?;
    let mut data = Dataset::open(&args[1])?;
    data.truncate(args.get(2).map(|s| s.parse().expect("limit must be an integer")).unwrap_or(100));

    let model = NetworkModel {
        spec: &spec,
        weights: &weights,
        preprocess: cfg.preprocess.clone(),
        saliency: cfg.saliency,
    };
    let report = run_blur_experiment(&model, &load_labeled(&data)?, &cfg.blur)?;
    println!("{:<16} {:>6} {:>6}", "variant", "top1", "top5");
    for v in &report.variants {
        println!("{:<16} {:>6.3} {:>6.3}", v.variant, v.top1, v.top5);
    }
    println!(
        "mean mask area {:.3}, degenerate masks {}, background-blur fixes {}",
        report.mean_mask_area,
        report.degenerate_masks,
        report.flips.len()
    );
    Ok(())
}
