use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use aoipdm::config::{PipelineConfig, RulReference};
use aoipdm::dataio::{load_cmapss, load_rul_truth, Dataset};
use aoipdm::pipeline::{estimate_rul, evaluate, ewma_chart, detect, train_pipeline, TrainedArtifacts};
use aoipdm::synth::{write_files, SynthConfig};
use aoipdm::Result;

#[derive(Parser)]
#[command(name = "aoipdm", version, about = "AOI-based predictive maintenance on C-MAPSS style data")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Dataset name in the file names (`train_<subset>.txt`).
    #[arg(long, global = true, default_value = "FD001")]
    subset: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Build hierarchies, knowledge base, forecaster and run rule.
    Train,
    /// Write per-unit quantification series.
    Quantify {
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Report EWMA change points.
    Detect {
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Estimate remaining useful life of test units.
    Rul {
        /// Only this unit.
        #[arg(long)]
        unit: Option<u32>,
    },
    /// Score RUL estimates and write the evaluation report.
    Evaluate,
    /// Write quantification and EWMA chart columns per unit.
    ExportPlots {
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Generate a synthetic dataset in the data directory.
    Synth {
        #[arg(long, default_value_t = 100)]
        train_units: usize,
        #[arg(long, default_value_t = 100)]
        test_units: usize,
    },
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn data_file(cli: &Cli, prefix: &str) -> PathBuf {
    cli.data_dir.join(format!("{prefix}_{}.txt", cli.subset))
}

fn load_split(cli: &Cli, art: &TrainedArtifacts, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    Ok(art.restrict(load_cmapss(data_file(cli, prefix))?))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { train_units, test_units } => {
            let cfg = SynthConfig {
                seed: cli.seed.unwrap_or(SynthConfig::default().seed),
                train_units: *train_units,
                test_units: *test_units,
                ..SynthConfig::default()
            };
            for p in write_files(&cfg, &cli.data_dir, &cli.subset)? {
                println!("{}", p.display());
            }
        }
        Command::Train => {
            let cfg = config(cli)?;
            let art = train_pipeline(load_cmapss(data_file(cli, "train"))?, &cfg)?;
            art.save(&cli.out_dir)?;
            write(&cli.out_dir.join("wer_selection.txt"), &art.selection.table())?;
            let s = &art.summary;
            println!(
                "units {} rows {} attributes {} clusters {} groups {} residual {}",
                s.training_units,
                s.training_rows,
                art.retained.len(),
                s.clusters,
                s.relation_groups,
                s.residual_rows
            );
            println!("holdout RMSE {:.6}", s.holdout_rmse);
            print!("{}", art.selection.table());
        }
        Command::Quantify { split } => {
            let art = TrainedArtifacts::load(&cli.out_dir)?;
            let ds = load_split(cli, &art, *split)?;
            for q in art.quantify_all(&ds.simulations)? {
                let name = format!("quantification/{}_unit{:03}.tsv", split_name(*split), q.sim_id);
                write(&cli.out_dir.join(name), &q.to_columns())?;
            }
        }
        Command::Detect { split } => {
            let art = TrainedArtifacts::load(&cli.out_dir)?;
            let ds = load_split(cli, &art, *split)?;
            let mut out = String::from("unit\tlength\tbaseline\tmu0\tsigma\tchange_cycle\n");
            for q in art.quantify_all(&ds.simulations)? {
                let x = q.weights();
                let d = detect(&x, art.ewma, art.config.spc.n_baseline, art.config.spc.two_sided)?;
                let base = if d.fallback { "pooled" } else { "own" };
                let cp = d.change_point.map_or_else(|| "NONE".into(), |c| (c + 1).to_string());
                out += &format!("{}\t{}\t{base}\t{}\t{}\t{cp}\n", q.sim_id, x.len(), d.params.mu0, d.params.sigma);
            }
            write(&cli.out_dir.join(format!("detect_{}.tsv", split_name(*split))), &out)?;
            print!("{out}");
        }
        Command::Rul { unit } => {
            let art = TrainedArtifacts::load(&cli.out_dir)?;
            let ds = load_split(cli, &art, Split::Test)?;
            println!("unit\tchange_cycle\tpredicted_rul\tcapped");
            for sim in ds.simulations.iter().filter(|s| unit.is_none_or(|u| u == s.unit)) {
                let r = estimate_rul(sim, &art)?;
                let cp = r.change_point.map_or_else(|| "NONE".into(), |c| (c + 1).to_string());
                let rul = r.predicted_rul.map_or_else(|| "NONE".into(), |v| v.to_string());
                println!("{}\t{cp}\t{rul}\t{}", r.unit, r.forecast_capped);
            }
        }
        Command::Evaluate => {
            let art = TrainedArtifacts::load(&cli.out_dir)?;
            let ev = match art.config.rul_reference {
                RulReference::TruthFile => {
                    let ds = load_split(cli, &art, Split::Test)?;
                    let truth = load_rul_truth(data_file(cli, "RUL"), ds.simulations.len())?;
                    evaluate(&ds.simulations, &truth, &art)?
                }
                RulReference::TrainingEndpoints => {
                    let ds = load_split(cli, &art, Split::Train)?;
                    evaluate(&ds.simulations, &[], &art)?
                }
            };
            write(&cli.out_dir.join("evaluation.tsv"), &ev.report())?;
            let summary = toml::to_string(&ev.summary).expect("summary serializes");
            write(&cli.out_dir.join("summary.toml"), &summary)?;
            print!("{summary}");
        }
        Command::ExportPlots { split } => {
            let art = TrainedArtifacts::load(&cli.out_dir)?;
            let ds = load_split(cli, &art, *split)?;
            for q in art.quantify_all(&ds.simulations)? {
                let name = format!("plots/{}_unit{:03}_ewma.tsv", split_name(*split), q.sim_id);
                write(&cli.out_dir.join(name), &ewma_chart(&q.weights(), &art)?)?;
            }
        }
    }
    Ok(())
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // stage errors already carry their cause in the message
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
