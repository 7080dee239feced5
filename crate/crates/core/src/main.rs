use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use noma::commands::{self, EvalConfig, MapFlags};
use noma::config::Config;
use noma::taskgen::Category;

#[derive(Parser)]
#[command(name = "noma", version, about = "Category-level neural object priors")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> noma::Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for o in &self.overrides {
            cfg.set_override(o)?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", s);
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Generate per-category reconstruction tasks and an optional scene sequence.
    GenTasks {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Search an architecture, meta-learn its initialization and bake a prior.
    TrainPrior {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        category: Category,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Map a recorded sequence into per-object meshes.
    Map {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Default architecture and random initialization for every object.
        #[arg(long)]
        no_priors: bool,
        /// `off` forces uniform ray sampling.
        #[arg(long, value_enum, default_value = "on")]
        ablate_ps: Toggle,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score meshes against ground truth with matching file names.
    Eval {
        #[arg(long)]
        meshes: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Completion thresholds in meters.
        #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_TAUS)]
        tau: Vec<f64>,
        #[arg(long, default_value_t = noma::meshmetrics::DEFAULT_SURFACE_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = noma::meshmetrics::DEFAULT_EMD_SUBSAMPLE)]
        emd_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a prior file's header and statistics.
    Inspect { path: PathBuf },
}

fn write_text(path: &Path, text: &str) -> noma::Result<()> {
    std::fs::write(path, text).map_err(|e| noma::Error::io(path, e))
}

fn run(cmd: Command) -> noma::Result<()> {
    match cmd {
        Command::GenTasks { out, cfg } => {
            let m = commands::gen_tasks(&cfg.load()?, &out)?;
            for (c, (tr, te)) in &m.counts {
                println!("{c}: {tr} train, {te} test");
            }
            if m.has_sequence {
                println!("sequence: {}", out.join(noma::dataset::SEQUENCE_DIR).display());
            }
        }
        Command::TrainPrior {
            dataset,
            category,
            out,
            cfg,
        } => {
            let path = commands::train_prior(&dataset, category, &cfg.load()?, &out)?;
            println!("{}", path.display());
        }
        Command::Map {
            sequence,
            priors,
            out,
            no_priors,
            ablate_ps,
            cfg,
        } => {
            let flags = MapFlags {
                no_priors,
                ablate_ps: ablate_ps == Toggle::Off,
            };
            let res = commands::map(&sequence, priors.as_deref(), &cfg.load()?, flags, &out)?;
            print!("{}", res.report);
        }
        Command::Eval {
            meshes,
            gt,
            tau,
            samples,
            emd_points,
            seed,
            out,
        } => {
            let cfg = EvalConfig {
                taus: tau,
                samples,
                emd_points,
                seed,
            };
            let rows = commands::eval(&meshes, &gt, &cfg)?;
            let table = commands::format_eval(&rows, &cfg.taus);
            if let Some(p) = out {
                write_text(&p, &table)?;
            }
            print!("{table}");
        }
        Command::Inspect { path } => print!("{}", commands::inspect(&path)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
