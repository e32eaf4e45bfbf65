//! Category-specific attention maps for every class of one image.
//!
//! cargo run --release --example attention_map -- [weights.lisw] [image.png]
//!
//! Without arguments a random-init network and a rendered scene are used.

use lisaliency::io::{load_image, preprocess, render_scene, write_map_png, RunConfig};
use lisaliency::network::{forward, NetworkSpec, NetworkWeights};
use lisaliency::saliency::{attention_map, mass_in_box};

fn main() -> lisaliency::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = RunConfig::reference();
    let spec = NetworkSpec::mini_vgg();
    let weights = match args.next() {
        Some(p) => NetworkWeights::load(p, &spec)?,
        None => {
            println!("no weights given; using a random-init network");
            NetworkWeights::init(&spec, cfg.seed)
        }
    };
    let scene = render_scene(cfg.seed, 1, 5, &cfg.dataset);
    let (raw, bbox) = match args.next() {
        Some(p) => (load_image(p)?, None),
        None => (scene.image, Some(scene.bbox)),
    };
    let image = preprocess(&raw, &cfg.preprocess)?;

    let probs = forward(&spec, &weights, &image)?;
    for class in 0..spec.class_count() {
        let map = attention_map(&spec, &weights, &image, class, &cfg.saliency)?;
        let path = format!("attention_{}.png", spec.classes()[class]);
        write_map_png(&path, &map.values)?;
        let inside = match bbox {
            Some(b) => format!("  box mass {:.3}", mass_in_box(&map.values, b.x, b.y, b.w, b.h)?),
            None => String::new(),
        };
        println!(
            "{:<8} p = {:.3}{}{inside}  -> {path}",
            spec.classes()[class],
            probs.data()[class],
            if map.degenerate { "  (degenerate)" } else { "" }
        );
    }
    Ok(())
}
