//! The `lisaliency` command line. Every subcommand is a thin wrapper over a
//! library call; settings come from `--config` with flags taking precedence.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiments::{load_labeled, run_blur_experiment, write_flips_csv, write_predictions_csv, write_report_csv, NetworkModel};
use crate::inhibition::LiSource;
use crate::io::{
    generate_dataset, load_image, preprocess, write_map_csv, write_map_png, write_sidecar, Dataset, RunConfig, RunMeta,
};
use crate::network::{forward, train_with, NetworkSpec, NetworkWeights, Tap};
use crate::saliency::{attention_map, saliency_map};
use crate::sanity::{run_randomization_test, RandomizationMode, RandomizationPlan, SimilarityRecord};

pub const THREADS_ENV: &str = "LISALIENCY_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "lisaliency",
    version = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)"),
    about = "Lateral-inhibition saliency maps for small CNNs"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the shapes-on-scenes corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a network on a labelled image directory.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory to report accuracy on after training.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Print the top-5 classes of an image.
    Classify {
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Attention map for one category (the predicted one by default).
    Attention {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        category: Option<usize>,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        li: LiArgs,
        #[command(flatten)]
        map_out: MapOut,
    },
    /// Fused top-5 saliency map.
    Saliency {
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        li: LiArgs,
        #[command(flatten)]
        map_out: MapOut,
    },
    /// Weight-randomization sanity check.
    Sanity {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mode: Option<RandomizationMode>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        li: LiArgs,
    },
    /// Background/foreground blur experiment.
    BlurExp {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Use only the first N images.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        flips: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        li: LiArgs,
    },
}

#[derive(Args, Debug)]
struct NetArgs {
    /// Network spec file; defaults to the bundled mini-VGG.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LiArgs {
    #[arg(long)]
    tap: Option<Tap>,
    #[arg(long)]
    li_source: Option<LiSource>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct MapOut {
    /// Grayscale PNG rendering.
    #[arg(long)]
    out: PathBuf,
    /// Raw values, one CSV row per map row.
    #[arg(long)]
    out_raw: PathBuf,
}

impl LiArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let s = &mut cfg.saliency;
        if let Some(t) = self.tap {
            s.tap = t;
        }
        if let Some(src) = self.li_source {
            s.li_source = src;
        }
        s.a = self.a.unwrap_or(s.a);
        s.b = self.b.unwrap_or(s.b);
        s.k = self.k.unwrap_or(s.k);
        cfg.validate()
    }
}

struct Loaded {
    spec: NetworkSpec,
    weights: NetworkWeights,
    checksum: String,
}

fn load_spec(net: &NetArgs, cfg: &RunConfig) -> Result<NetworkSpec> {
    match net.spec.as_ref().or(cfg.paths.spec.as_ref()) {
        Some(p) => NetworkSpec::load(p),
        None => Ok(NetworkSpec::mini_vgg()),
    }
}

fn load_net(net: &NetArgs, cfg: &RunConfig) -> CliResult<Loaded> {
    let spec = load_spec(net, cfg)?;
    let path = net
        .weights
        .as_ref()
        .or(cfg.paths.weights.as_ref())
        .ok_or_else(|| usage("--weights is required (or set paths.weights in the config)"))?;
    let weights = NetworkWeights::load(path, &spec)?;
    let checksum = weights.checksum();
    Ok(Loaded { spec, weights, checksum })
}

fn dataset_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| cfg.paths.dataset.clone())
        .ok_or_else(|| usage("--dataset is required (or set paths.dataset in the config)"))
}

enum Failure {
    /// Reported with the usage text; exit code 2.
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(message: &str) -> Failure {
    Failure::Usage(message.to_string())
}

fn load_input(path: &Path, cfg: &RunConfig) -> Result<crate::tensor::Tensor> {
    preprocess(&load_image(path)?, &cfg.preprocess)
}

fn meta(command: &str, seed: u64, net: &Loaded, cfg: &RunConfig) -> RunMeta {
    RunMeta::new(command, seed, net.spec.name(), Some(net.checksum.clone()), cfg)
}

fn write_map(out: &MapOut, map: &crate::tensor::Tensor, meta: &RunMeta) -> Result<()> {
    write_map_png(&out.out, map)?;
    write_map_csv(&out.out_raw, map)?;
    write_sidecar(&out.out, meta)?;
    write_sidecar(&out.out_raw, meta)?;
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenData { out, seed } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let summary = generate_dataset(&out, cfg.seed, &cfg.dataset)?;
            for (split, n) in crate::io::SPLITS.iter().zip(summary.counts) {
                println!("{split}: {n} images");
            }
            write_sidecar(&out, &RunMeta::new("gen-data", cfg.seed, "", None, &cfg))?;
        }
        Command::Train { dataset, out, eval, epochs, lr, seed, net } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.lr = lr.unwrap_or(cfg.train.lr);
            cfg.train.seed = seed.unwrap_or(cfg.train.seed);
            let spec = load_spec(&net, &cfg)?;
            let samples = Dataset::open(dataset_dir(&dataset, &cfg)?)?.samples(&cfg.preprocess)?;
            let init = match &net.weights {
                Some(p) => NetworkWeights::load(p, &spec)?,
                None => NetworkWeights::init(&spec, cfg.train.seed),
            };
            let outcome = train_with(&spec, init, &samples, &cfg.train, |s| {
                println!("epoch {} loss {:.4} running_accuracy {:.4}", s.epoch + 1, s.mean_loss, s.running_accuracy);
            })?;
            println!("train_accuracy {:.4}", crate::network::accuracy(&spec, &outcome.weights, &samples)?);
            if let Some(dir) = eval {
                let eval_samples = Dataset::open(dir)?.samples(&cfg.preprocess)?;
                println!("eval_accuracy {:.4}", crate::network::accuracy(&spec, &outcome.weights, &eval_samples)?);
            }
            outcome.weights.save(&out)?;
            let checksum = outcome.weights.checksum();
            println!("weights {} sha256 {checksum}", out.display());
            write_sidecar(&out, &RunMeta::new("train", cfg.train.seed, spec.name(), Some(checksum), &cfg))?;
        }
        Command::Classify { image, net } => {
            let loaded = load_net(&net, &cfg)?;
            let probs = forward(&loaded.spec, &loaded.weights, &load_input(&image, &cfg)?)?;
            println!("rank,class_id,class_name,prob");
            for (rank, c) in probs.top_k(5).into_iter().enumerate() {
                println!("{},{c},{},{:.6}", rank + 1, loaded.spec.classes()[c], probs.data()[c]);
            }
        }
        Command::Attention { image, category, net, li, map_out } => {
            li.apply(&mut cfg)?;
            let loaded = load_net(&net, &cfg)?;
            let input = load_input(&image, &cfg)?;
            let category = match category {
                Some(c) => c,
                None => forward(&loaded.spec, &loaded.weights, &input)?.argmax(),
            };
            let map = attention_map(&loaded.spec, &loaded.weights, &input, category, &cfg.saliency)?;
            println!("category {category} ({})", loaded.spec.classes()[category]);
            if map.degenerate {
                eprintln!("warning: attention map is all zero (degenerate)");
            }
            write_map(&map_out, &map.values, &meta("attention", cfg.seed, &loaded, &cfg))?;
        }
        Command::Saliency { image, net, li, map_out } => {
            li.apply(&mut cfg)?;
            let loaded = load_net(&net, &cfg)?;
            let map = saliency_map(&loaded.spec, &loaded.weights, &load_input(&image, &cfg)?, &cfg.saliency)?;
            let names: Vec<&str> = map.categories.iter().map(|&c| loaded.spec.classes()[c].as_str()).collect();
            println!("categories {}", names.join(","));
            if map.degenerate {
                eprintln!("warning: saliency map is all zero (degenerate)");
            }
            write_map(&map_out, &map.values, &meta("saliency", cfg.seed, &loaded, &cfg))?;
        }
        Command::Sanity { image, mode, seeds, out, net, li } => {
            li.apply(&mut cfg)?;
            cfg.sanity.mode = mode.unwrap_or(cfg.sanity.mode);
            cfg.sanity.seeds = seeds.unwrap_or(cfg.sanity.seeds);
            cfg.validate()?;
            let loaded = load_net(&net, &cfg)?;
            let input = load_input(&image, &cfg)?;
            let mut records: Vec<SimilarityRecord> = Vec::new();
            for s in 0..cfg.sanity.seeds as u64 {
                let plan = RandomizationPlan::new(&loaded.spec, cfg.sanity.mode, cfg.seed + s);
                records.extend(run_randomization_test(&loaded.spec, &loaded.weights, &input, &plan, &cfg.saliency)?);
            }
            write_similarity_csv(&out, &records)?;
            println!("{} records written to {}", records.len(), out.display());
            write_sidecar(&out, &meta("sanity", cfg.seed, &loaded, &cfg))?;
        }
        Command::BlurExp { dataset, radii, threshold, limit, out, flips, predictions, net, li } => {
            li.apply(&mut cfg)?;
            if let Some(r) = radii {
                cfg.blur.radii = r;
            }
            cfg.blur.threshold = threshold.unwrap_or(cfg.blur.threshold);
            cfg.validate()?;
            let loaded = load_net(&net, &cfg)?;
            let mut ds = Dataset::open(dataset_dir(&dataset, &cfg)?)?;
            if let Some(n) = limit {
                ds.truncate(n);
            }
            let model = NetworkModel {
                spec: &loaded.spec,
                weights: &loaded.weights,
                preprocess: cfg.preprocess.clone(),
                saliency: cfg.saliency,
            };
            let report = run_blur_experiment(&model, &load_labeled(&ds)?, &cfg.blur)?;
            println!("variant,top1,top5,count");
            for v in &report.variants {
                println!("{},{:.4},{:.4},{}", v.variant, v.top1, v.top5, v.count);
            }
            let m = meta("blur-exp", cfg.seed, &loaded, &cfg);
            write_report_csv(&out, &report)?;
            write_sidecar(&out, &m)?;
            if let Some(p) = flips {
                write_flips_csv(&p, &report)?;
                write_sidecar(&p, &m)?;
            }
            if let Some(p) = predictions {
                write_predictions_csv(&p, &report)?;
                write_sidecar(&p, &m)?;
            }
        }
    }
    Ok(())
}

/// Columns: `stage,layer_name,seed,hog_pearson,spearman`.
pub fn write_similarity_csv(path: &Path, records: &[SimilarityRecord]) -> Result<()> {
    let mut text = String::from("stage,layer_name,seed,hog_pearson,spearman\n");
    for r in records {
        text.push_str(&format!("{},{},{},{},{}\n", r.stage, r.layer_name, r.seed, r.hog_pearson, r.spearman));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Sizes the global worker pool from `LISALIENCY_THREADS` (0 or unset
/// means one worker per core).
pub fn configure_threads() -> Result<()> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    if n > 0 {
        // A pool may already exist when embedded; the existing one is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code: 0 on success, 2 on usage errors, 1 on
/// any other failure, which is reported as one `error[kind]: message`
/// line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads().map_err(Failure::Run).and_then(|_| execute(cli));
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error[usage]: {m}");
            eprintln!("{}", Cli::command().render_usage());
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error[{}]: {e}", e.kind());
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn version_mentions_schema() {
        let v = Cli::command().get_version().unwrap().to_string();
        assert!(v.ends_with(&format!("(config schema {})", crate::io::CONFIG_SCHEMA)));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["lisaliency", "classify"]), 2);
        assert_eq!(run(["lisaliency", "no-such-command"]), 2);
        assert_eq!(run(["lisaliency", "classify", "--image", "x.png", "--bogus"]), 2);
        assert_eq!(run(["lisaliency", "classify", "--image", "x.png"]), 2);
    }
}
