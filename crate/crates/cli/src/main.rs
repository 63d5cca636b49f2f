use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use kisbench_cli::harness::{
    demo_scripts, run_simulation, simulate_in_process, ClockMode, SimScript,
};
use kisbench_cli::jobs::{self, JobError, PreprocessVariant, Services};
use kisbench_cli::plan::{self, PlanRequest};
use kisbench_core::analytics::aggregate;
use kisbench_core::clock::SystemClock;
use kisbench_core::synth::http::ServiceEndpoints;
use kisbench_core::synth::SynthVariant;
use kisbench_server::{build_app, serve, ServerConfig};

#[derive(Parser)]
#[command(name = "kisbench", version, about = "Known-item search evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the evaluation server.
    Serve {
        /// Config file (TOML or JSON). Falls back to $KISBENCH_CONFIG.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Without a config: serve the built-in study plan and corpus.
        #[arg(long, conflicts_with = "config")]
        demo: bool,
        #[arg(long, env = "KISBENCH_ADMIN_TOKEN", requires = "demo")]
        admin_token: Option<String>,
        #[arg(long, requires = "demo", default_value = "127.0.0.1:8080")]
        bind: std::net::SocketAddr,
    },
    /// Apply a filter pipeline to a frame-sequence directory.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        /// original, f1, f2 or f3
        #[arg(long)]
        variant: PreprocessVariant,
        /// JSON file with filter parameters; defaults apply otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a synthesis pipeline over a frame-sequence directory.
    Synth {
        #[arg(long)]
        input: PathBuf,
        /// s1, s2 or s3
        #[arg(long)]
        variant: SynthVariant,
        /// One caption per line, one line per shot.
        #[arg(long)]
        captions: Option<PathBuf>,
        /// JSON file with service endpoints. Offline stubs are used otherwise.
        #[arg(long)]
        services: Option<PathBuf>,
        /// Shot length for the offline segmenter.
        #[arg(long, default_value_t = 24)]
        stub_shot_frames: usize,
        #[arg(long, default_value = "a short video clip")]
        stub_caption: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive simulated participants against a server.
    Simulate {
        /// JSON array of participant scripts.
        #[arg(long, conflicts_with = "demo")]
        scripts: Option<PathBuf>,
        /// Generate N demo participants instead of reading scripts.
        #[arg(long)]
        demo: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Existing server. Without it a server is started in-process.
        #[arg(long)]
        server: Option<String>,
        /// Config for the in-process server; the demo setup otherwise.
        #[arg(long, conflicts_with = "server")]
        config: Option<PathBuf>,
        /// Use a virtual clock (in-process server only).
        #[arg(long, conflicts_with = "server")]
        r#virtual: bool,
        /// Maximum requests per second in real-clock mode.
        #[arg(long)]
        rate: Option<f64>,
        /// Write the event log here (in-process server only).
        #[arg(long)]
        log_out: Option<PathBuf>,
        /// Write the per-participant outcome report here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate an event log into result tables.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write an evaluation plan with its condition matrix.
    MakePlan {
        /// VIDEO:START-END in ms, repeatable, in task order.
        #[arg(long = "video", value_parser = plan::parse_segment)]
        videos: Vec<kisbench_core::domain::VideoSegment>,
        /// Comma separated hint variants, e.g. Original,F2,F3,S,Textual.
        #[arg(long, value_delimiter = ',', value_parser = plan::parse_variant)]
        variants: Vec<kisbench_core::domain::HintKind>,
        #[arg(long)]
        duration_ms: Option<i64>,
        #[arg(long)]
        collection_size: Option<u32>,
        /// JSON hints file keyed by video id and variant.
        #[arg(long)]
        hints: Option<PathBuf>,
        /// Emit the built-in five-task study plan.
        #[arg(long, conflicts_with_all = ["videos", "variants", "hints"])]
        fixture: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Markdown,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<JobError> for Failure {
    fn from(e: JobError) -> Self {
        match e {
            JobError::Usage(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}

async fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Serve {
            config,
            demo,
            admin_token,
            bind,
        } => {
            let cfg = if demo {
                let token = admin_token.ok_or_else(|| Failure::Usage("--demo needs --admin-token".into()))?;
                let mut cfg = ServerConfig::demo(&token, vec![format!("http://{bind}/retrieval")]);
                cfg.bind = bind;
                cfg
            } else {
                let path = ServerConfig::locate(config.as_deref())
                    .ok_or_else(|| Failure::Usage("no config: pass --config, set KISBENCH_CONFIG or use --demo".into()))?;
                ServerConfig::load(&path).map_err(runtime)?
            };
            serve_forever(cfg).await
        }
        Command::Preprocess {
            input,
            variant,
            params,
            out,
        } => {
            let params = jobs::load_params(params.as_deref())?;
            let sidecar = jobs::preprocess(&input, variant, &params, &out)?;
            log::info!("wrote {} frames to {} ({})", sidecar.frames, out.display(), sidecar.output_hash);
            Ok(())
        }
        Command::Synth {
            input,
            variant,
            captions,
            services,
            stub_shot_frames,
            stub_caption,
            out,
        } => {
            let captions = captions.as_deref().map(jobs::read_captions).transpose()?;
            let services = match services {
                Some(path) => Services::Http(read_json::<ServiceEndpoints>(&path)?),
                None => Services::Stub {
                    shot_frames: stub_shot_frames,
                    caption: stub_caption,
                },
            };
            let sidecar = jobs::synthesize(&input, variant, captions.as_deref(), &services, &out)?;
            log::info!("wrote {} frames over {} shots to {}", sidecar.frames, sidecar.shots.len(), out.display());
            Ok(())
        }
        Command::Simulate {
            scripts,
            demo,
            seed,
            server,
            config,
            r#virtual,
            rate,
            log_out,
            out,
        } => {
            let scripts: Vec<SimScript> = match (scripts, demo) {
                (Some(path), _) => read_json(&path)?,
                (None, Some(n)) => demo_scripts(n, seed),
                (None, None) => return Err(Failure::Usage("pass --scripts or --demo N".into())),
            };
            if let Some(rate) = rate {
                if !(rate > 0.0) {
                    return Err(Failure::Usage("--rate must be positive".into()));
                }
            }
            let report = match server {
                Some(uri) => {
                    if log_out.is_some() {
                        return Err(Failure::Usage("--log-out needs the in-process server".into()));
                    }
                    let mode = ClockMode::Real { max_requests_per_sec: rate };
                    run_simulation(&uri, &scripts, mode).await.map_err(runtime)?
                }
                None => {
                    let mut cfg = match config {
                        Some(path) => ServerConfig::load(&path).map_err(runtime)?,
                        None => ServerConfig::demo("simulation-admin", Vec::new()),
                    };
                    if cfg.seed.is_none() {
                        cfg.seed = Some(seed);
                    }
                    let start = r#virtual.then_some(1_700_000_000_000);
                    let run = simulate_in_process(cfg, &scripts, start, rate).await.map_err(runtime)?;
                    if let Some(path) = log_out {
                        fs::write(&path, &run.log).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
                    }
                    run.sim
                }
            };
            eprintln!("{}", report.summary());
            if let Some(path) = out {
                emit(Some(&path), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
            }
            Ok(())
        }
        Command::Report { log, format, out } => {
            let file = fs::File::open(&log).map_err(|e| runtime(format!("{}: {e}", log.display())))?;
            let report = aggregate(BufReader::new(file)).map_err(runtime)?;
            let text = match format {
                Format::Json => report.to_json(),
                Format::Csv => report.to_csv(),
                Format::Markdown => report.to_markdown(),
            };
            emit(out.as_deref(), &text)
        }
        Command::MakePlan {
            videos,
            variants,
            duration_ms,
            collection_size,
            hints,
            fixture,
            out,
        } => {
            let mut built = if fixture {
                plan::fixture_plan()
            } else {
                if videos.is_empty() || variants.is_empty() {
                    return Err(Failure::Usage("pass --video and --variants, or --fixture".into()));
                }
                let hints = hints.as_deref().map(plan::read_hints).transpose()?;
                plan::make_plan(PlanRequest {
                    videos,
                    variants,
                    duration_ms: None,
                    collection_size: None,
                    hints,
                })?
            };
            if let Some(d) = duration_ms {
                built.task_duration_ms = d;
            }
            if let Some(n) = collection_size {
                built.collection_size = n;
            }
            kisbench_core::domain::validate_plan(&built).map_err(|v| {
                Failure::Usage(v.iter().map(|x| format!("{}: {}", x.path, x.message)).collect::<Vec<_>>().join("; "))
            })?;
            emit(out.as_deref(), &built.to_json())
        }
    }
}

async fn serve_forever(cfg: ServerConfig) -> Result<(), Failure> {
    let (state, app) = build_app(&cfg, Arc::new(SystemClock)).map_err(runtime)?;
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .map_err(|e| runtime(format!("bind {}: {e}", cfg.bind)))?;
    log::info!("listening on http://{}", listener.local_addr().map_err(runtime)?);
    serve(listener, state, app, cfg.sweep_interval_ms, async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    })
    .await
    .map_err(runtime)
}
