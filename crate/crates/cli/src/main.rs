use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hclff::data::{load_checkpoint, load_data, load_split, Checkpoint, Split, TrainConfig};
use hclff::hierarchy::save_hierarchy;
use hclff::inference::export_goodness_maps;
use hclff::numerics::Tensor;
use hclff::trainer::{
    derive_hierarchy, evaluate, forward_dataset, probe_accuracies, run_two_stage, RunMode, RunOptions,
};
use hclff::Error;

#[derive(Parser)]
#[command(name = "hclff", version, about = "Hierarchical contrastive Forward-Forward training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sequential,
    Pipeline,
}

#[derive(Args)]
struct RunFlags {
    /// Execution mode; overrides the config file.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Batches buffered between pipeline stages.
    #[arg(long)]
    queue_capacity: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs of each phase.
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Flat pretraining only; writes pretrain.ckpt to the output directory.
    Pretrain {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Derives a class hierarchy from a pretrained checkpoint.
    BuildHierarchy { checkpoint: PathBuf, out: PathBuf },
    /// Full two-stage training (pretraining is skipped when the config names a hierarchy file).
    Train {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Accuracy report as CSV on a split name (train, val, test) or a dataset directory.
    Eval { checkpoint: PathBuf, dataset: String },
    /// Linear-probe accuracy of the last layer's features before and after decoupling.
    Probe { checkpoint: PathBuf },
    /// Per-class goodness maps of one test image as CSV.
    ExportGoodness {
        checkpoint: PathBuf,
        image_index: usize,
        out: PathBuf,
        /// Layer to export; defaults to the last.
        #[arg(long)]
        layer: Option<usize>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) | Error::Validation { .. } | Error::Argument(_) => 2,
        Error::Parse { .. } | Error::Io { .. } | Error::Checkpoint(_) => 3,
        _ => 4,
    }
}

fn apply_flags(cfg: &mut TrainConfig, flags: &RunFlags) -> hclff::Result<RunOptions> {
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = flags.epochs {
        cfg.training.epochs = epochs;
        cfg.training.pretrain_epochs = Some(epochs);
    }
    if let Some(mode) = flags.mode {
        cfg.execution.mode = match mode {
            Mode::Sequential => hclff::data::ExecMode::Sequential,
            Mode::Pipeline => hclff::data::ExecMode::Pipeline,
        };
    }
    if let Some(q) = flags.queue_capacity {
        cfg.execution.queue_capacity = q;
    }
    cfg.validate()?;
    let resume = match &flags.resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.config.model != cfg.model || ck.seed != cfg.seed {
                return Err(Error::Config(format!(
                    "{} was trained with a different model or seed",
                    p.display()
                )));
            }
            Some(Checkpoint {
                config: TrainConfig {
                    execution: cfg.execution,
                    ..ck.config.clone()
                },
                ..ck
            })
        }
        None => None,
    };
    Ok(RunOptions {
        mode: cfg.execution.run_mode(),
        output_dir: Some(cfg.output_dir.clone()),
        resume,
        pretrain_only: false,
        verbose: true,
    })
}

fn train(config: &Path, flags: &RunFlags, pretrain_only: bool) -> hclff::Result<()> {
    let mut cfg = TrainConfig::load(config)?;
    let mut opts = apply_flags(&mut cfg, flags)?;
    opts.pretrain_only = pretrain_only;
    if let RunMode::Pipeline { queue_capacity } = opts.mode {
        eprintln!("pipeline mode, queue capacity {queue_capacity}");
    }
    let data = load_data(&cfg)?;
    let outcome = run_two_stage(&cfg, &data, &opts)?;
    if let Some(d) = &outcome.derived {
        eprintln!("hierarchy from probe prototypes (probe val acc {:.4}):", d.probe_accuracy);
        eprint!("{}", d.hierarchy.to_text());
    }
    if let Some(sip) = outcome.checkpoint.sip {
        println!(
            "selected layers [{}, {}], validation accuracy {:.4}",
            sip.s, sip.e, sip.val_accuracy
        );
    }
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn build_hierarchy(checkpoint: &Path, out: &Path) -> hclff::Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let data = load_data(&ck.config)?;
    let derived = derive_hierarchy(&ck, &data)?;
    save_hierarchy(&derived.hierarchy, out)?;
    eprintln!("probe validation accuracy {:.4}", derived.probe_accuracy);
    print!("{}", derived.hierarchy.to_text());
    Ok(())
}

fn eval(checkpoint: &Path, dataset: &str) -> hclff::Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let data = match dataset.parse::<Split>() {
        Ok(split) => load_split(&ck.config, split)?,
        Err(_) => {
            let mut cfg = ck.config.clone();
            cfg.data.dir = PathBuf::from(dataset);
            load_split(&cfg, Split::Test)?
        }
    };
    let train = load_split(&ck.config, Split::Train)?;
    let report = evaluate(&ck, &data, Some(&train))?;
    print!("{}", report.to_csv());
    Ok(())
}

fn probe(checkpoint: &Path) -> hclff::Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let data = load_data(&ck.config)?;
    let train = forward_dataset(&ck.network, &data.train)?;
    let test = forward_dataset(&ck.network, &data.test)?;
    let cfg = hclff::inference::ProbeConfig {
        seed: ck.seed,
        ..ck.config.probe
    };
    let (pre, post) = probe_accuracies(
        &train,
        data.train.labels(),
        &test,
        data.test.labels(),
        ck.network.spec.num_classes,
        &cfg,
    )?;
    println!("features,test_accuracy");
    println!("pre_norm,{pre}");
    println!("post_norm,{post}");
    Ok(())
}

fn export_goodness(checkpoint: &Path, index: usize, out: &Path, layer: Option<usize>) -> hclff::Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let test = load_split(&ck.config, Split::Test)?;
    if index >= test.len() {
        return Err(Error::Argument(format!(
            "image {index} out of range for {} test images",
            test.len()
        )));
    }
    let layer = layer.unwrap_or(ck.network.num_layers() - 1);
    if layer >= ck.network.num_layers() {
        return Err(Error::Argument(format!("network has no layer {layer}")));
    }
    let image = Tensor::from_vec(&test.image_shape(), test.image(index).to_vec())?;
    let outs = ck.network.trace_sample(&image)?;
    export_goodness_maps(&outs[layer].preact, ck.network.spec.num_classes, out)?;
    eprintln!(
        "test image {index} (label {}), layer {layer} -> {}",
        test.labels()[index],
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Pretrain { config, flags } => train(config, flags, true),
        Command::Train { config, flags } => train(config, flags, false),
        Command::BuildHierarchy { checkpoint, out } => build_hierarchy(checkpoint, out),
        Command::Eval { checkpoint, dataset } => eval(checkpoint, dataset),
        Command::Probe { checkpoint } => probe(checkpoint),
        Command::ExportGoodness {
            checkpoint,
            image_index,
            out,
            layer,
        } => export_goodness(checkpoint, *image_index, out, *layer),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
