use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fieldlink::{analyze, run_scenario, AnalyzeOptions, CliError, Manifest, RunOptions};
use fieldlink_core::config::{LoadedScenario, Scenario};
use fieldlink_core::ctrlserver::{ControlServer, PasswordHash};
use fieldlink_core::fieldnet::{Frame, FrameDump};
use fieldlink_core::plant::Plant;
use fieldlink_core::SensorKind;
use fieldlink_server::{load_credentials, system_clock, AppState};

#[derive(Parser)]
#[command(name = "fieldlink", version, about = "Remote plantation monitoring and digital irrigation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and write history, actuation log and manifest.
    Run {
        /// Scenario file, or a built-in name (default, table1_scenario, table2_scenario).
        #[arg(long, default_value = "default")]
        config: PathBuf,
        /// Repeat the run recorded in a manifest instead.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Simulated seconds per wall second; omit to run flat out.
        #[arg(long)]
        accel: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Serve the HTTP API while the simulation runs.
    Serve {
        #[arg(long, default_value = "default")]
        config: PathBuf,
        #[arg(long, env = "FIELDLINK_PORT")]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        accel: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// TOML file with `[[users]] name = .., hash = ..` entries.
        #[arg(long, env = "FIELDLINK_CREDENTIALS")]
        credentials: Option<PathBuf>,
        /// Directory for the server's event log and state file.
        #[arg(long, env = "FIELDLINK_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long, env = "FIELDLINK_LOG")]
        log_path: Option<PathBuf>,
    },
    /// Seasonal summary, crop suitability or financial projection.
    Analyze {
        /// History CSV (not needed for finance).
        history: Option<PathBuf>,
        #[arg(long)]
        mode: String,
        /// TOML with optional [calendar] and [finance] sections.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Crop rule table, or `demo`.
        #[arg(long)]
        rules: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Decode a 12-byte frame given as hex.
    FrameDump { hex: String },
    /// Print a salted password hash for a credentials file. Reads the
    /// password from stdin when not given.
    HashPassword {
        #[arg(long)]
        password: Option<String>,
    },
}

fn load(config: &PathBuf) -> Result<LoadedScenario, CliError> {
    Ok(Scenario::load(config)?)
}

fn init_logging(log_path: Option<&PathBuf>) -> Result<(), CliError> {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if let Some(path) = log_path {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| CliError::Io { path: path.clone(), source })?;
        builder.target(env_logger::Target::Pipe(Box::new(file)));
    }
    let _ = builder.try_init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, manifest, seed, duration, accel, out_dir } => {
            let _ = init_logging(None);
            cmd_run(config, manifest, seed, duration, accel, out_dir)
        }
        Command::Serve { config, port, bind, accel, seed, credentials, data_dir, log_path } => {
            cmd_serve(config, port, bind, accel, seed, credentials, data_dir, log_path)
        }
        Command::Analyze { history, mode, params, rules, out_dir } => {
            let _ = init_logging(None);
            analyze(&AnalyzeOptions { history, mode, params, rules, out_dir }).map(|paths| {
                for p in paths {
                    println!("{}", p.display());
                }
            })
        }
        Command::FrameDump { hex } => cmd_frame_dump(&hex),
        Command::HashPassword { password } => cmd_hash_password(password),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_run(
    config: PathBuf,
    manifest: Option<PathBuf>,
    seed: Option<u64>,
    duration: Option<f64>,
    accel: Option<f64>,
    out_dir: PathBuf,
) -> Result<(), CliError> {
    let (loaded, mut opts) = match manifest {
        Some(path) => {
            let m = Manifest::read(&path)?;
            (m.scenario()?, RunOptions { seed: Some(m.seed), duration_s: Some(m.duration_s), accel: None })
        }
        None => (load(&config)?, RunOptions::default()),
    };
    opts.seed = seed.or(opts.seed);
    opts.duration_s = duration.or(opts.duration_s);
    opts.accel = accel;
    let m = run_scenario(&loaded, &opts, &out_dir)?;
    println!(
        "{}: {} s simulated in {:.2} s wall, {} history rows (sha256 {}), {} actuation records -> {}",
        m.scenario,
        m.duration_s,
        m.wall_clock_s,
        m.history_rows,
        m.history_sha256,
        m.actuation_rows,
        out_dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_serve(
    config: PathBuf,
    port: Option<u16>,
    bind: Option<String>,
    accel: Option<f64>,
    seed: Option<u64>,
    credentials: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    log_path: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut loaded = load(&config)?;
    if let Some(seed) = seed {
        loaded.scenario.seed = seed;
    }
    let serve = loaded.scenario.serve.clone();
    init_logging(log_path.as_ref().or(serve.log_path.as_ref()))?;
    let accel = accel.unwrap_or(serve.accel);
    if !(accel > 0.0) {
        return Err(CliError::Usage(format!("accel must be > 0, got {accel}")));
    }
    let credentials = credentials
        .or(serve.credentials.clone())
        .ok_or_else(|| CliError::Usage("no credentials file; pass --credentials (see `fieldlink hash-password`)".into()))?;
    let users = load_credentials(&credentials).map_err(|e| CliError::Usage(e.to_string()))?;
    let data_dir = data_dir.unwrap_or(serve.data_dir.clone());
    let (mut server, warnings) = ControlServer::open(loaded.scenario.server.clone(), SensorKind::ALL.to_vec(), &data_dir)
        .map_err(|e| CliError::Usage(format!("{}: {e}", data_dir.display())))?;
    for w in warnings {
        log::warn!("{w}");
    }
    for (name, hash) in users {
        server.add_user(&name, hash);
    }
    let plant = Plant::new(&loaded, server)?;
    let app = AppState::new(plant, system_clock());

    let addr = format!("{}:{}", bind.unwrap_or(serve.bind), port.unwrap_or(serve.port));
    let addr: SocketAddr = addr.parse().map_err(|e| CliError::Usage(format!("bad bind address `{addr}`: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io { path: PathBuf::from("runtime"), source })?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| CliError::Io { path: PathBuf::from(addr.to_string()), source })?;
        log::info!("serving {} on http://{addr} at {accel}x", loaded.scenario.name);
        fieldlink_server::serve(listener, app, accel, shutdown_signal())
            .await
            .map_err(|source| CliError::Io { path: PathBuf::from(addr.to_string()), source })
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
    log::info!("shutting down");
}

fn cmd_frame_dump(text: &str) -> Result<(), CliError> {
    let cleaned: String = text.chars().filter(|c| c.is_ascii_hexdigit()).collect();
    let bytes = hex::decode(&cleaned).map_err(|e| CliError::Usage(format!("bad hex: {e}")))?;
    println!("{}", FrameDump(&bytes));
    Frame::decode(&bytes).map(|_| ()).map_err(|e| CliError::Usage(format!("frame rejected: {e}")))
}

fn cmd_hash_password(password: Option<String>) -> Result<(), CliError> {
    let password = match password {
        Some(p) => p,
        None => {
            let mut line = String::new();
            std::io::stdin()
                .lock()
                .read_line(&mut line)
                .map_err(|source| CliError::Io { path: PathBuf::from("stdin"), source })?;
            line.trim_end_matches(['\r', '\n']).to_string()
        }
    };
    if password.is_empty() {
        return Err(CliError::Usage("empty password".into()));
    }
    let mut out = std::io::stdout();
    let _ = writeln!(out, "{}", PasswordHash::create(&password).0);
    Ok(())
}
