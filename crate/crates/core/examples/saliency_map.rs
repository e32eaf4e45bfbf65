//! Fused top-5 saliency map, written as PNG and raw CSV, for both
//! back-propagation taps and both inhibition sources.
//!
//! cargo run --release --example saliency_map -- [weights.lisw] [image.png]

use lisaliency::inhibition::LiSource;
use lisaliency::io::{load_image, preprocess, render_scene, write_map_csv, write_map_png, RunConfig};
use lisaliency::network::{NetworkSpec, NetworkWeights, Tap};
use lisaliency::saliency::{saliency_map, SaliencyConfig};

fn main() -> lisaliency::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = RunConfig::reference();
    let spec = NetworkSpec::mini_vgg();
    let weights = match args.next() {
        Some(p) => NetworkWeights::load(p, &spec)?,
        None => NetworkWeights::init(&spec, cfg.seed),
    };
    let raw = match args.next() {
        Some(p) => load_image(p)?,
        None => render_scene(cfg.seed, 1, 2, &cfg.dataset).image,
    };
    let image = preprocess(&raw, &cfg.preprocess)?;

    for tap in [Tap::BeforeSoftmax, Tap::AfterSoftmax] {
        for li_source in [LiSource::Gradient, LiSource::Activation] {
            let sc = SaliencyConfig { tap, li_source, ..cfg.saliency };
            let map = saliency_map(&spec, &weights, &image, &sc)?;
            let stem = format!("saliency_{tap}_{li_source}");
            write_map_png(format!("{stem}.png"), &map.values)?;
            write_map_csv(format!("{stem}.csv"), &map.values)?;
            let names: Vec<&str> = map.categories.iter().map(|&c| spec.classes()[c].as_str()).collect();
            println!(
                "{stem}: top-5 [{}], peak {:.4}{}",
                names.join(", "),
                map.values.max(),
                if map.degenerate { ", degenerate" } else { "" }
            );
        }
    }
    Ok(())
}
