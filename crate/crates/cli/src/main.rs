use std::fs::OpenOptions;
use std::io::{self, Write};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::Parser;
use tactile_cli::args::{Cli, Command};
use tactile_cli::serve::{self, ServeOptions};
use tactile_cli::{commands, load_config, CliError};

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Generate(g) => commands::generate(g, &mut out),
        Command::Augment(a) => commands::augment(a, &mut out),
        Command::Train(a) => commands::train(a, &mut out),
        Command::Eval(a) => commands::eval(a, &mut out),
        Command::Bench(a) => commands::bench(a, &mut out),
        Command::Replay(a) => {
            let cfg = load_config(cli.config.as_deref())?;
            commands::replay(a, cfg, &mut out, &mut io::stderr()).map(|_| ())
        }
        Command::Serve(a) => {
            let cfg = load_config(cli.config.as_deref())?;
            let model = commands::load_weights(&cfg, a.weights.as_deref())?;
            let mut opts = ServeOptions::new(cfg, model);
            if let Some(path) = &a.event_log {
                let file = OpenOptions::new().create(true).append(true).open(path)?;
                let file = Mutex::new(file);
                opts.tap = Some(Arc::new(move |e| {
                    let mut f = file.lock().expect("event log lock");
                    if let Err(err) = writeln!(f, "{}", e.to_line()) {
                        tracing::warn!("event log write failed: {err}");
                    }
                }));
            }
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async {
                let (addr, handle) = serve::spawn(a.addr, opts).await?;
                eprintln!("listening on ws://{addr}/ws");
                handle.await.map_err(|e| CliError::Io(io::Error::other(e)))
            })
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code())
        }
    }
}
