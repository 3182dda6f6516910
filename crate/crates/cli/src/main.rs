use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use droplab_cli::config::{parse_config, Command};
use droplab_cli::run::{report_error, run};

#[derive(Parser, Debug)]
#[command(name = "droplab", version = droplab_cli::run::VERSION, about = "Droplets, Laplacian growth and Coulomb gases on a grid")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads for parallel solves (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }

    let fail = |dir: Option<&PathBuf>, kind: &str, msg: &str| {
        eprintln!("error: {msg}");
        if let Some(d) = dir {
            report_error(d, cli.command.name(), kind, msg, 0.0);
        }
        ExitCode::from(1)
    };

    let text = match fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => return fail(cli.output.as_ref(), "io", &format!("{}: {e}", cli.config.display())),
    };
    let mut cfg = match parse_config(&text, Some(cli.command)) {
        Ok(c) => c,
        Err(errs) => {
            for e in &errs {
                eprintln!("config: {e}");
            }
            return fail(cli.output.as_ref(), "config", &errs.join("; "));
        }
    };
    if let Some(base) = cli.config.parent() {
        cfg.rebase(base);
    }
    if let Some(o) = &cli.output {
        cfg.output_dir = Some(o.clone());
    }
    let Some(dir) = cfg.output_dir.clone() else {
        return fail(None, "config", "no output directory: pass --output or set output_dir");
    };
    match run(&cfg, &dir) {
        0 => ExitCode::SUCCESS,
        code => ExitCode::from(code as u8),
    }
}
