use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use kan_bench::aggregate::aggregate;
use kan_bench::config::{read_toml, ExperimentConfig, Preset, TrainingConfig};
use kan_bench::explain::{explain, ExplainOptions};
use kan_bench::report::{emit_reports, ComplexitySpec};
use kan_bench::run::{read_records_dir, run_prepared, write_jsonl, LoadedDataset};
use kan_bench::sweep::{run_sweep, Family, SweepPlan};
use kan_bench::synth::SmoothSubspaceSpec;
use kan_tsc::complexity::write_complexity_csv;
use kan_tsc::interpret::write_shap_csv;
use kan_tsc::network::Checkpoint;
use kan_tsc::optimizer::write_epoch_csv;
use kan_tsc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "kan-bench",
    version,
    about = "KAN and MLP time-series classification benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration on one dataset for each configured seed.
    Train {
        /// TOML experiment file.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in model configuration, used with --dataset.
        #[arg(long, requires = "dataset")]
        preset: Option<Preset>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, default_value = "data/ucr")]
        data_dir: PathBuf,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "out/train")]
        out: PathBuf,
    },
    /// Run a one-axis hyperparameter sweep.
    Sweep {
        #[arg(long)]
        family: Family,
        /// TOML sweep plan; its `family` field is overridden by --family.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value = "data/ucr")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = default_parallelism())]
        parallelism: usize,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// Print parameter, FLOP and energy estimates as CSV.
    Complexity {
        /// TOML table spec; defaults to the reference rows at archive means.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Edge importance, pruned graph and Shapley attributions for a checkpoint.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory containing `<name>_TRAIN.tsv` and `<name>_TEST.tsv`.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1000)]
        shap_permutations: usize,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long, default_value = "out/explain")]
        out: PathBuf,
    },
    /// Aggregate `*.jsonl` run records into report CSVs.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pool all runs instead of averaging seeds per dataset first.
        #[arg(long)]
        pooled: bool,
    },
    /// Write the synthetic SmoothSubspace stand-in.
    Synth {
        #[arg(long, default_value = "data/ucr")]
        out: PathBuf,
    },
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train_cmd(
    config: Option<PathBuf>,
    preset: Option<Preset>,
    dataset: Option<String>,
    data_dir: PathBuf,
    seed: Option<u64>,
    epochs: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut exp = match (config, preset) {
        (Some(path), _) => read_toml::<ExperimentConfig>(&path)?,
        (None, Some(p)) => ExperimentConfig {
            dataset: dataset.clone().unwrap_or_default(),
            data_dir,
            model: p.config(),
            training: TrainingConfig::default(),
        },
        (None, None) => return Err(Error::Config("train needs --config or --preset".into())),
    };
    if let Some(d) = dataset {
        exp.dataset = d;
    }
    if let Some(s) = seed {
        exp.training.seeds = vec![s];
    }
    if let Some(e) = epochs {
        exp.training.epochs = e;
    }
    let data = LoadedDataset::load(&exp.data_dir, &exp.dataset)?;
    let mut records = Vec::new();
    for &s in &exp.training.seeds {
        let cfg = exp.training.train_config(&exp.model, s);
        let art = run_prepared(&data, &exp.model, &cfg, exp.training.train_fraction)?;
        let stem = format!("{}_seed{s}", exp.dataset);
        write_epoch_csv(create(&out.join(format!("{stem}_epochs.csv")))?, &art.logs)?;
        art.checkpoint.save(&out.join(format!("{stem}.ckpt.json")))?;
        log::info!(
            "{} {} seed {s}: macro-F1 {:.4} (best epoch {})",
            exp.dataset,
            exp.model.key(),
            art.record.f1(),
            art.record.best_epoch
        );
        println!(
            "{}\t{}\tseed={s}\tf1={:.4}\tprecision={:.4}\trecall={:.4}\tbest_epoch={}",
            exp.dataset,
            exp.model.key(),
            art.record.metrics.macro_f1,
            art.record.metrics.macro_precision,
            art.record.metrics.macro_recall,
            art.record.best_epoch
        );
        records.push(art.record);
    }
    write_jsonl(create(&out.join(format!("{}.jsonl", exp.dataset)))?, &records)
}

fn explain_cmd(checkpoint: &Path, dataset: &Path, opts: &ExplainOptions, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let e = explain(&ckpt, dataset, opts)?;
    if let Some(g) = &e.graph {
        let mut w = create(&out.join("graph.json"))?;
        serde_json::to_writer_pretty(&mut w, g)?;
        w.flush().map_err(|err| Error::Io {
            path: out.join("graph.json"),
            source: err,
        })?;
        println!("pruned graph: {} active edges", g.edges.len());
    }
    write_shap_csv(create(&out.join("shap.csv"))?, &e.shap)?;
    if !e.top_edge_features.is_empty() {
        println!("top time steps by edge importance: {:?}", e.top_edge_features);
    }
    println!("top time steps by mean |SHAP|: {:?}", e.top_shap_features);
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            preset,
            dataset,
            data_dir,
            seed,
            epochs,
            out,
        } => train_cmd(config, preset, dataset, data_dir, seed, epochs, &out),
        Command::Sweep {
            family,
            plan,
            data_dir,
            parallelism,
            out,
        } => read_toml::<SweepPlan>(&plan).and_then(|mut p| {
            p.family = family;
            p.resolve_datasets()?;
            let records = run_sweep(&p, &data_dir, parallelism)?;
            let path = out.join(format!("{}.jsonl", family.name()));
            write_jsonl(create(&path)?, &records)?;
            println!("{} records written to {}", records.len(), path.display());
            Ok(())
        }),
        Command::Complexity { spec } => spec
            .map_or_else(|| Ok(ComplexitySpec::default()), |p| read_toml(&p))
            .and_then(|s| write_complexity_csv(std::io::stdout().lock(), &s.rows()?)),
        Command::Explain {
            checkpoint,
            dataset,
            shap_permutations,
            samples,
            threshold,
            out,
        } => {
            let opts = ExplainOptions {
                shap_permutations,
                samples,
                threshold,
                ..ExplainOptions::default()
            };
            explain_cmd(&checkpoint, &dataset, &opts, &out)
        }
        Command::Report { input, out, pooled } => read_records_dir(&input).and_then(|records| {
            let report = aggregate(&records, pooled);
            for p in emit_reports(&report, &records, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }),
        Command::Synth { out } => SmoothSubspaceSpec::default().write(&out).map(|()| {
            println!("wrote {}", out.join("SmoothSubspace").display());
        }),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
