use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;

use poseval_core::harness::EvalConfig;
use poseval_core::metrics::{DEFAULT_TAU_MM, DEFAULT_THETA};
use poseval_core::visibility::DEFAULT_DELTA_MM;
use poseval_service::{Service, ServiceConfig, DEFAULT_MAX_BODY_BYTES, DEFAULT_QUEUE_DEPTH};

#[derive(Parser, Debug)]
#[command(name = "poseval-service", version, about = "Score pose estimate submissions over HTTP")]
struct Args {
    /// Benchmark root: a dataset directory or a directory of datasets.
    #[arg(long, env = "POSEVAL_DATASET")]
    dataset: PathBuf,
    /// Directory holding the submission ledger, payloads and reports.
    #[arg(long)]
    state_dir: PathBuf,
    /// Test targets file. Without it every annotated object is a target.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Misalignment tolerance τ, millimeters.
    #[arg(long, value_name = "MM", default_value_t = DEFAULT_TAU_MM)]
    tau: f64,
    /// Correctness threshold θ on the VSD error, a fraction in (0, 1].
    #[arg(long, value_name = "FRACTION", default_value_t = DEFAULT_THETA)]
    theta: f64,
    /// Occlusion tolerance δ for visibility masks, millimeters.
    #[arg(long, value_name = "MM", default_value_t = DEFAULT_DELTA_MM)]
    delta: f64,
    /// Worker threads per scoring job.
    #[arg(long, value_name = "N", default_value_t = std::thread::available_parallelism().map_or(1, |n| n.get()))]
    workers: usize,
    /// Largest accepted submission, bytes.
    #[arg(long, value_name = "BYTES", default_value_t = DEFAULT_MAX_BODY_BYTES)]
    max_body_bytes: usize,
    /// Queued submissions allowed before new ones get 503.
    #[arg(long, value_name = "N", default_value_t = DEFAULT_QUEUE_DEPTH)]
    queue_depth: usize,
}

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let eval = match EvalConfig::new(args.tau, args.theta, args.delta, args.workers) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    let cfg = ServiceConfig {
        targets_file: args.targets,
        eval,
        max_body_bytes: args.max_body_bytes,
        queue_depth: args.queue_depth,
        ..ServiceConfig::new(args.state_dir, args.dataset)
    };
    let mut service = match Service::open(cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_io() { 1 } else { 2 });
        }
    };
    service.spawn_worker();
    let listener = match tokio::net::TcpListener::bind(args.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.bind);
            std::process::exit(1);
        }
    };
    log::info!("listening on {}", args.bind);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    };
    if let Err(e) = axum::serve(listener, service.router())
        .with_graceful_shutdown(shutdown)
        .await
    {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
