//! Model server for the predictor line protocol.
//!
//! Any [`Predictor`] can sit behind it; the binary serves the builtin
//! n-gram model, which makes it the fixture the client is tested against.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::header::CONTENT_TYPE;
use axum::response::IntoResponse;
use axum::routing::post;
use axum::Router;
use maskpress::predictor::{BuiltinModel, Predictor};
use maskpress::protocol::{handle_line, ServerInfo};
use maskpress::text::Tokenizer;
use tokio::sync::oneshot;

pub struct Backend {
    predictor: Box<dyn Predictor>,
    tokenizer: Option<Tokenizer>,
    info: ServerInfo,
}

impl Backend {
    pub fn new(predictor: Box<dyn Predictor>, tokenizer: Option<Tokenizer>, info: ServerInfo) -> Self {
        Self {
            predictor,
            tokenizer,
            info,
        }
    }

    /// Builtin model over `tokenizer`'s vocabulary.
    pub fn builtin(order: u8, alpha: f64, tokenizer: Tokenizer) -> maskpress::Result<Self> {
        let model = BuiltinModel::new(tokenizer.vocab_size(), order, alpha)?;
        Ok(Self::new(Box::new(model), Some(tokenizer), ServerInfo::default()))
    }

    pub fn answer(&self, line: &str) -> String {
        handle_line(line, self.predictor.as_ref(), self.tokenizer.as_ref(), &self.info)
    }
}

pub fn router(backend: Arc<Backend>) -> Router {
    Router::new().route("/v1", post(v1)).with_state(backend)
}

async fn v1(State(backend): State<Arc<Backend>>, body: String) -> impl IntoResponse {
    // model calls are CPU-bound; keep them off the reactor threads
    let reply = tokio::task::spawn_blocking(move || backend.answer(&body))
        .await
        .unwrap_or_else(|e| format!(r#"{{"id":0,"error":{{"code":"predictor_error","message":"{e}"}}}}"#));
    ([(CONTENT_TYPE, "application/json")], reply)
}

/// Answers one request per line until the input ends. Blank lines are
/// skipped.
pub fn serve_stdio(input: impl BufRead, mut output: impl Write, backend: &Backend) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut reply = backend.answer(&line);
        reply.push('\n');
        output.write_all(reply.as_bytes())?;
        output.flush()?;
    }
    Ok(())
}

pub async fn serve_http(listener: tokio::net::TcpListener, backend: Arc<Backend>) -> std::io::Result<()> {
    axum::serve(listener, router(backend)).await
}

/// HTTP server on its own runtime thread; stops when dropped.
pub struct HttpServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl HttpServer {
    pub fn spawn(addr: SocketAddr, backend: Arc<Backend>) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, router(backend))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stdio_answers_each_line() {
        let backend = Backend::builtin(0, 1.0, Tokenizer::Bytes).unwrap();
        let input = "{\"id\":1,\"op\":\"hello\"}\n\n{\"id\":2,\"op\":\"surprisal\",\"tokens\":[97,97]}\nnope\n";
        let mut out = Vec::new();
        serve_stdio(input.as_bytes(), &mut out, &backend).unwrap();
        let out = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("{\"id\":1,\"protocol_version\":1,"));
        assert!(lines[1].starts_with("{\"id\":2,\"s\":["));
        assert!(lines[2].contains("\"bad_request\""));
    }
}
