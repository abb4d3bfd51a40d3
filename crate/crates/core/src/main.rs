use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coldfed::cli;
use coldfed::config::{keys_help, RunConfig};
use coldfed::diffusion::InferenceMode;
use coldfed::modality::Guidance;

#[derive(Parser)]
#[command(name = "coldfed", version, about = "Federated cold-start recommendation with modality-guided diffusion")]
#[command(after_long_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark to <out>/data
    GenData(Common),
    /// Run federated training and write the model checkpoint
    Train(Common),
    /// Generate embeddings for the cold items
    Infer(Common),
    /// Cold-start ranking metrics and distribution diagnostics
    Eval(Common),
    /// Inversion attack: diffusion release vs the feature mapper
    Attack(Common),
    /// Train and evaluate once per sweep value
    Sweep(Common),
}

/// Flags shared by every command; each overrides the matching config key.
#[derive(Args)]
#[command(after_long_help = keys_help())]
struct Common {
    /// Config file (`key = value` lines; see `--help` for the keys)
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// deterministic | stochastic
    #[arg(long)]
    mode: Option<InferenceMode>,
    /// full | zero | random | none
    #[arg(long)]
    condition: Option<Guidance>,
    /// Train the denoiser every other round
    #[arg(long)]
    light: bool,
    /// Laplace scale on client uploads
    #[arg(long)]
    ldp: Option<f64>,
    /// Log progress to stderr
    #[arg(short, long)]
    verbose: bool,
}

impl Common {
    fn resolve(&self) -> coldfed::Result<RunConfig> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(m) = self.mode {
            cfg.diffusion.inference_mode = m;
        }
        if let Some(c) = self.condition {
            cfg.guidance = c;
        }
        if self.light {
            cfg.fed.light_mode = true;
        }
        if let Some(l) = self.ldp {
            cfg.fed.ldp_scale = l;
        }
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> coldfed::Result<()> {
    let (Command::GenData(c)
    | Command::Train(c)
    | Command::Infer(c)
    | Command::Eval(c)
    | Command::Attack(c)
    | Command::Sweep(c)) = &cli.command;
    // built explicitly so no environment variable is consulted
    env_logger::Builder::new()
        .filter_level(if c.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();
    let cfg = c.resolve()?;
    match cli.command {
        Command::GenData(_) => {
            println!("{}", cli::cmd_gen_data(&cfg)?.display());
        }
        Command::Train(_) => {
            let out = cli::cmd_train(&cfg)?;
            println!("kept round {} of {}", out.model.round, cfg.fed.rounds);
        }
        Command::Infer(_) => {
            println!("{}", cli::cmd_infer(&cfg)?.display());
        }
        Command::Eval(_) => {
            print!("{}", cli::cmd_eval(&cfg)?.to_csv());
        }
        Command::Attack(_) => {
            print!("{}", cli::cmd_attack(&cfg)?.to_csv());
        }
        Command::Sweep(_) => {
            println!("{}", cli::cmd_sweep(&cfg)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
