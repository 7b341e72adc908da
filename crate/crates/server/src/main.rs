use std::io::{stdin, stdout, BufWriter};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use maskpress::text::Tokenizer;
use maskpress_server::{serve_http, serve_stdio, Backend};

/// Serves the builtin model over the predictor protocol.
#[derive(Parser, Debug)]
#[command(name = "maskpress-server", version)]
struct Args {
    /// Context order of the builtin model (0 or 1).
    #[arg(long, default_value_t = 1)]
    order: u8,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Tokenizer JSON (as written next to payloads); bytes when absent.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Speak newline-delimited JSON on stdin/stdout instead of HTTP.
    #[arg(long, conflicts_with = "listen")]
    stdio: bool,
    #[arg(long, default_value = "127.0.0.1:8700")]
    listen: SocketAddr,
}

fn run(args: Args) -> Result<(), String> {
    let tokenizer = match &args.tokenizer {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Tokenizer::from_json(&text).map_err(|e| e.to_string())?
        }
        None => Tokenizer::Bytes,
    };
    let backend = Backend::builtin(args.order, args.alpha, tokenizer).map_err(|e| e.to_string())?;
    if args.stdio {
        return serve_stdio(stdin().lock(), BufWriter::new(stdout().lock()), &backend).map_err(|e| e.to_string());
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.listen).await?;
        eprintln!("listening on http://{}/v1", listener.local_addr()?);
        serve_http(listener, Arc::new(backend)).await
    })
    .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("maskpress-server: {e}");
            ExitCode::FAILURE
        }
    }
}
