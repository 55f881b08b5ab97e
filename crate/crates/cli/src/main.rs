//! `crg-distill`: loss reports, spectrum inspection, gradient certification
//! and a desk-scale distillation run over NPY feature maps.

mod commands;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crg_distill::TermToggles;
use serde::Serialize;

use commands::{CliError, CliResult};
use config::{Masks, NSetting, RelationAxis, RunConfig, Selection, Terms, Variant};

#[derive(Parser, Debug)]
#[command(
    name = "crg-distill",
    version,
    about = "Channel relational graph distillation losses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-sample V/E/S and combined losses for a teacher/student pair.
    Loss {
        teacher: PathBuf,
        student: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Laplacian spectrum and embedding of each sample.
    Spectrum {
        input: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Compare analytic gradients with central differences (exit 1 on failure).
    Check {
        teacher: PathBuf,
        student: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
        #[arg(long, hide = true)]
        corrupt_analytic: bool,
    },
    /// Gradient descent of a unit-normal student toward the teacher.
    DistillSim {
        teacher: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Embedding size: a count, or a fraction of the channel count.
    #[arg(long, value_parser = NSetting::parse, default_value = "0.5")]
    n: NSetting,
    #[arg(long)]
    no_spatial_mask: bool,
    #[arg(long)]
    no_channel_mask: bool,
    #[arg(long)]
    no_relation_mask: bool,
    /// Enabled loss terms, letters from V, E, S (e.g. `VE`); empty or `none` disables all.
    #[arg(long, value_parser = parse_only)]
    only: Option<TermToggles>,
    #[arg(long, value_enum, default_value = "global")]
    relation_softmax: RelationAxis,
    #[arg(long, value_enum, default_value = "largest")]
    eigen: Selection,
    #[arg(long, value_enum, default_value = "vector")]
    spectral_variant: Variant,
    /// `C_t × C_s` projection applied to the student channels.
    #[arg(long, value_name = "PATH")]
    adapter: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Write the JSON report here instead of standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn parse_only(s: &str) -> Result<TermToggles, String> {
    TermToggles::parse(s).ok_or_else(|| format!("{s:?}: expected letters from V, E, S"))
}

impl ConfigArgs {
    fn run_config(&self) -> RunConfig {
        let terms = self.only.unwrap_or_default();
        RunConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            n: self.n,
            masks: Masks {
                spatial: !self.no_spatial_mask,
                channel: !self.no_channel_mask,
                relation: !self.no_relation_mask,
            },
            terms: Terms {
                vertex: terms.vertex,
                edge: terms.edge,
                spectral: terms.spectral,
            },
            relation_softmax: self.relation_softmax,
            eigen_selection: self.eigen,
            spectral_variant: self.spectral_variant,
            adapter: self.adapter.clone(),
            seed: self.seed,
            output: self.out.clone(),
        }
    }
}

fn emit<T: Serialize>(report: &T, out: Option<&Path>) -> CliResult<()> {
    let mut json = serde_json::to_string_pretty(report).expect("reports serialize");
    json.push('\n');
    match out {
        Some(path) => std::fs::write(path, json).map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(json.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Output {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

fn run(cli: Cli) -> CliResult<u8> {
    let opts = match &cli.command {
        Command::Loss { opts, .. }
        | Command::Spectrum { opts, .. }
        | Command::Check { opts, .. }
        | Command::DistillSim { opts, .. } => opts,
    };
    let config = opts.run_config();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    let out = config.output.as_deref();

    pool.install(|| match &cli.command {
        Command::Loss { teacher, student, .. } => {
            emit(&commands::cmd_loss(teacher, student, &config)?, out)?;
            Ok(0)
        }
        Command::Spectrum { input, .. } => {
            emit(&commands::cmd_spectrum(input, &config)?, out)?;
            Ok(0)
        }
        Command::Check {
            teacher,
            student,
            corrupt_analytic,
            ..
        } => {
            let report = commands::cmd_check(teacher, student, &config, *corrupt_analytic)?;
            emit(&report, out)?;
            Ok(if report.certified { 0 } else { 1 })
        }
        Command::DistillSim { teacher, steps, lr, .. } => {
            emit(&commands::cmd_distill_sim(teacher, &config, *steps, *lr)?, out)?;
            Ok(0)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}
