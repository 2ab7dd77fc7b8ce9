use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rada::error::{Error, Result};
use rada::experiment::{
    cmd_ablate, cmd_eval, cmd_gen, cmd_grad_check, cmd_oracle_check, cmd_train, ExperimentConfig,
};
use rada::structure::StructureDirection;

#[derive(Parser)]
#[command(
    name = "rada",
    version,
    about = "Relationship-aware adversarial domain adaptation on synthetic tasks"
)]
struct Cli {
    /// Print the default configuration as TOML and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate source/target datasets and the ground-truth precision matrix.
    Gen(Common),
    /// Train the selected method on generated datasets.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from checkpoint.json in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run all methods over the configured seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds, overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Re-evaluate the checkpoint in the output directory.
    Eval(Common),
    /// Compare analytic and finite-difference gradients.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 10)]
        count: u64,
    },
    /// Compare the closed-form precision with the iterative oracle.
    OracleCheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// d2y or y2d
    #[arg(long)]
    direction: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg.experiment.out = out.clone();
        }
        if let Some(m) = &self.method {
            cfg.experiment.method = m.parse()?;
        }
        if let Some(d) = &self.direction {
            cfg.train.direction = d.parse::<StructureDirection>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.print_defaults {
        print!("{}", ExperimentConfig::default().to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config {
            field: "command".into(),
            reason: "no command given; try --help".into(),
        });
    };
    match command {
        Command::Gen(c) => {
            let cfg = c.resolve()?;
            cmd_gen(&cfg)?;
            println!("wrote datasets to {}", cfg.experiment.out.display());
        }
        Command::Train { common, resume } => {
            let s = cmd_train(&common.resolve()?, resume)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).expect("serializable")
            );
        }
        Command::Ablate { common, seeds } => {
            let mut cfg = common.resolve()?;
            if !seeds.is_empty() {
                cfg.experiment.seeds = seeds;
            }
            let table = cmd_ablate(&cfg)?;
            println!("method,runs,failed,target_acc_mean,target_acc_sd,pad_mean");
            for r in &table.rows {
                println!(
                    "{},{},{},{:.4},{:.4},{:.4}",
                    r.arm, r.runs, r.failed, r.acc_mean, r.acc_sd, r.pad_mean
                );
            }
        }
        Command::Eval(c) => {
            let s = cmd_eval(&c.resolve()?)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).expect("serializable")
            );
        }
        Command::GradCheck { common, count } => {
            let cfg = common.resolve()?;
            let first = cfg.train.seed;
            let seeds: Vec<u64> = (first..first + count).collect();
            let rows = cmd_grad_check(&cfg, &seeds)?;
            let worst = rows.iter().map(|(_, r)| r.report.max()).fold(0.0, f64::max);
            println!("{} checks, worst relative error {worst:e}", rows.len());
        }
        Command::OracleCheck(c) => {
            let cfg = c.resolve()?;
            let all = cmd_oracle_check(&cfg, cfg.train.seed)?;
            let worst = all.iter().map(|c| c.relative_frobenius).fold(0.0, f64::max);
            println!(
                "{} matrices, worst relative Frobenius gap {worst:e}",
                all.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
