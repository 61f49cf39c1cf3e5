use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dramforge::config::load_config;
use dramforge::parallel::run_multi_chain_with;
use dramforge::postproc::{export, Export};
use dramforge::sampler::{run_with, ExistingOutputs, RunOptions, SimulationOutputs};
use dramforge::spec::Parallelism;
use dramforge::Error;

/// Delayed-rejection adaptive Metropolis sampler.
#[derive(Parser)]
#[command(name = "dramforge", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run (or resume) a simulation described by a config file.
    Run {
        config: PathBuf,
        /// Override a config entry; `target.<key>=...` reaches the target section.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Continue incomplete outputs left by an interrupted run.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        /// Delete existing outputs and start over.
        #[arg(long)]
        force: bool,
    },
    /// Export plot data from finished outputs.
    Postproc {
        prefix: PathBuf,
        #[arg(long, value_enum)]
        what: What,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Stats,
    Acf,
    Covmat,
    Contrib,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Spec(_) | Error::Config { .. } | Error::Parse { .. } => 2,
        Error::RestartRefused(_) | Error::AlreadyComplete(_) => 4,
        _ => 3,
    }
}

/// `DRAMFORGE_OUT` replaces the directory part of the output prefix.
fn redirect(prefix: &str, out_dir: Option<&Path>) -> String {
    match out_dir {
        None => prefix.to_string(),
        Some(dir) => {
            let name = Path::new(prefix).file_name().map_or_else(|| prefix.into(), |n| n.to_string_lossy().into_owned());
            dir.join(name).to_string_lossy().into_owned()
        }
    }
}

fn summary(out: &SimulationOutputs) {
    let r = &out.report;
    if let Some(p) = &out.paths {
        println!("chain: {}", p.chain.display());
    }
    println!(
        "iterations {}  accepted {}  acceptance {:.4}  burn-in row {}",
        r.iterations, r.accepted_count, r.mean_accept_rate, r.burnin_loc
    );
    println!("ESS {:.1}  refined sample {}  IAC passes {:?}", r.ess, r.refined_size, r.iac_history);
    if let Some(par) = &r.parallel {
        println!(
            "workers {}  fitted p {:.4}  TV {:.4}  optimal workers {}",
            par.num_workers, par.fitted_p, par.fit_distance, par.optimal_workers
        );
    }
}

fn run(config: &Path, set: &[String], resume: bool, force: bool) -> Result<(), Error> {
    let mut cfg = load_config(config, set)?;
    let out_dir = std::env::var_os("DRAMFORGE_OUT").map(PathBuf::from);
    cfg.spec.output_prefix = redirect(&cfg.spec.output_prefix, out_dir.as_deref());
    let opts = RunOptions {
        existing: if force {
            ExistingOutputs::Overwrite
        } else if resume {
            ExistingOutputs::Resume
        } else {
            ExistingOutputs::Refuse
        },
        target_label: cfg.target_label.clone(),
        config_echo: Some(cfg.text.clone()),
        ..RunOptions::default()
    };
    if cfg.spec.parallelism == Parallelism::MultiChain {
        let out = run_multi_chain_with(&cfg.spec, &cfg.target, cfg.spec.num_workers, &opts)?;
        for (k, c) in out.chains.iter().enumerate() {
            println!("-- chain {}", k + 1);
            summary(c);
        }
        let v = if out.convergence.flagged { "NOT converged" } else { "converged" };
        println!("cross-chain check: {v}");
        for w in &out.convergence.warnings {
            println!("warning: {w}");
        }
    } else {
        summary(&run_with(&cfg.spec, &cfg.target, &opts)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, set, resume, force } => run(&config, &set, resume, force),
        Cmd::Postproc { prefix, what } => {
            let what = match what {
                What::Stats => Export::Stats,
                What::Acf => Export::Acf,
                What::Covmat => Export::Covmat,
                What::Contrib => Export::Contrib,
            };
            export(&prefix, what).map(|f| println!("wrote {} and {}", f.csv.display(), f.script.display()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dramforge: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
