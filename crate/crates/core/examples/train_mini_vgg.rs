//! Trains mini-VGG on a generated corpus with the reference settings.
//!
//! cargo run --release --example gen_dataset -- desk_corpus
//! cargo run --release --example train_mini_vgg -- desk_corpus mini_vgg.lisw [epochs]

use std::time::Instant;

use lisaliency::io::{Dataset, RunConfig};
use lisaliency::network::{accuracy, train_with, NetworkSpec, NetworkWeights};

fn main() -> lisaliency::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = args.next().unwrap_or_else(|| "desk_corpus".into());
    let out = args.next().unwrap_or_else(|| "mini_vgg.lisw".into());
    let mut cfg = RunConfig::reference();
    if let Some(e) = args.next() {
        cfg.train.epochs = e.parse().expect("epochs must be an integer");
    }

    let spec = NetworkSpec::mini_vgg();
    let train = Dataset::open(format!("{data}/train"))?.samples(&cfg.preprocess)?;
    let test = Dataset::open(format!("{data}/test"))?.samples(&cfg.preprocess)?;
    println!("{} parameters, {} training images", NetworkWeights::init(&spec, 0).parameter_count(), train.len());

    let start = Instant::now();
    let init = NetworkWeights::init(&spec, cfg.train.seed);
    let outcome = train_with(&spec, init, &train, &cfg.train, |s| {
        println!(
            "epoch {:>2}  lr {:.5}  loss {:.4}  running acc {:.3}  ({:.0}s)",
            s.epoch + 1,
            cfg.train.lr_at(s.epoch),
            s.mean_loss,
            s.running_accuracy,
            start.elapsed().as_secs_f64()
        );
    })?;

    println!("train accuracy {:.3}", accuracy(&spec, &outcome.weights, &train)?);
    println!("test accuracy  {:.3}", accuracy(&spec, &outcome.weights, &test)?);
    outcome.weights.save(&out)?;
    println!("saved {out} (sha256 {})", outcome.weights.checksum());
    Ok(())
}
