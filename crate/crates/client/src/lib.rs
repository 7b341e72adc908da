//! [`Predictor`] backed by an external model server.
//!
//! Endpoints are either `http://host:port` (one `POST /v1` per request) or
//! `stdio:<command> [args..]`, which spawns the server and talks
//! newline-delimited JSON over its pipes. Both transports can carry several
//! requests at once; replies are matched back by id.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use maskpress::predictor::{PredictiveDistribution, Predictor};
use maskpress::protocol::{dist_from_wire, parse_prob, Hello, Op, Request, Response, PROTOCOL_VERSION};
use maskpress::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);
/// Requests in flight at once for leave-one-out batches.
const LOO_FANOUT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Http(String),
    Stdio(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err(Error::Config("stdio endpoint without a command".into()));
            }
            return Ok(Endpoint::Stdio(argv));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            let base = s.trim_end_matches('/');
            let url = if base.ends_with("/v1") { base.to_owned() } else { format!("{base}/v1") };
            return Ok(Endpoint::Http(url));
        }
        Err(Error::Config(format!("endpoint '{s}' is neither http(s):// nor stdio:")))
    }
}

trait Transport: Send + Sync {
    fn call(&self, req: &Request) -> Result<Response>;
}

fn transport_error(e: impl std::fmt::Display) -> Error {
    Error::predictor(format!("model server unavailable: {e}"))
}

struct Http {
    client: reqwest::blocking::Client,
    url: String,
}

impl Transport for Http {
    fn call(&self, req: &Request) -> Result<Response> {
        let body = serde_json::to_string(req).expect("requests serialize");
        let text = self
            .client
            .post(&self.url)
            .header("content-type", "application/json")
            .body(body)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(transport_error)?;
        serde_json::from_str(&text).map_err(|e| Error::predictor(format!("bad response: {e}")))
    }
}

type Pending = Arc<Mutex<HashMap<u64, Sender<Response>>>>;

struct Pipe {
    child: Mutex<Child>,
    stdin: Mutex<ChildStdin>,
    pending: Pending,
    closed: Arc<Mutex<Option<String>>>,
    timeout: Duration,
    reader: Option<JoinHandle<()>>,
}

impl Pipe {
    fn spawn(argv: &[String], timeout: Duration) -> Result<Self> {
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| transport_error(format!("{}: {e}", argv[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let pending: Pending = Arc::default();
        let closed = Arc::new(Mutex::new(None));
        let reader = {
            let pending = Arc::clone(&pending);
            let closed = Arc::clone(&closed);
            std::thread::spawn(move || {
                let why = read_replies(BufReader::new(stdout), &pending);
                *closed.lock().expect("not poisoned") = Some(why);
                // dropping the senders wakes every waiting caller
                pending.lock().expect("not poisoned").clear();
            })
        };
        Ok(Self {
            child: Mutex::new(child),
            stdin: Mutex::new(stdin),
            pending,
            closed,
            timeout,
            reader: Some(reader),
        })
    }

    fn closed_reason(&self) -> String {
        self.closed
            .lock()
            .expect("not poisoned")
            .clone()
            .unwrap_or_else(|| "connection closed".into())
    }
}

/// Routes each reply line to whoever is waiting on its id. Returns why the
/// stream ended.
fn read_replies(input: impl BufRead, pending: &Pending) -> String {
    for line in input.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => return format!("read failed: {e}"),
        };
        if line.trim().is_empty() {
            continue;
        }
        let resp: Response = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => return format!("unparseable reply: {e}"),
        };
        if let Some(tx) = pending.lock().expect("not poisoned").remove(&resp.id) {
            let _ = tx.send(resp);
        }
    }
    "server exited".into()
}

impl Transport for Pipe {
    fn call(&self, req: &Request) -> Result<Response> {
        let (tx, rx) = mpsc::channel();
        {
            let mut pending = self.pending.lock().expect("not poisoned");
            if self.closed.lock().expect("not poisoned").is_some() {
                return Err(transport_error(self.closed_reason()));
            }
            pending.insert(req.id, tx);
        }
        let mut line = serde_json::to_string(req).expect("requests serialize");
        line.push('\n');
        {
            let mut stdin = self.stdin.lock().expect("not poisoned");
            if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
                self.pending.lock().expect("not poisoned").remove(&req.id);
                return Err(transport_error(e));
            }
        }
        match rx.recv_timeout(self.timeout) {
            Ok(r) => Ok(r),
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().expect("not poisoned").remove(&req.id);
                Err(transport_error(format!("no reply to request {} within {:?}", req.id, self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => Err(transport_error(self.closed_reason())),
        }
    }
}

impl Drop for Pipe {
    fn drop(&mut self) {
        let mut child = self.child.lock().expect("not poisoned");
        let _ = child.kill();
        let _ = child.wait();
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

pub struct RemotePredictor {
    endpoint: String,
    transport: Box<dyn Transport>,
    next_id: AtomicU64,
    hello: Hello,
}

impl std::fmt::Debug for RemotePredictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemotePredictor")
            .field("endpoint", &self.endpoint)
            .field("hello", &self.hello)
            .finish()
    }
}

impl RemotePredictor {
    pub fn connect(endpoint: &str) -> Result<Self> {
        Self::connect_with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    /// Opens the transport and runs the handshake. Servers that do not
    /// promise deterministic answers are refused.
    pub fn connect_with_timeout(endpoint: &str, timeout: Duration) -> Result<Self> {
        let transport: Box<dyn Transport> = match endpoint.parse()? {
            Endpoint::Http(url) => Box::new(Http {
                client: reqwest::blocking::Client::builder()
                    .timeout(timeout)
                    .build()
                    .map_err(transport_error)?,
                url,
            }),
            Endpoint::Stdio(argv) => Box::new(Pipe::spawn(&argv, timeout)?),
        };
        let reply = transport.call(&Request::new(0, Op::Hello))?.into_result()?;
        let hello = reply
            .hello
            .ok_or_else(|| Error::predictor("handshake reply has no capabilities"))?;
        if hello.protocol_version != PROTOCOL_VERSION {
            return Err(Error::predictor(format!(
                "server speaks protocol {}, client speaks {PROTOCOL_VERSION}",
                hello.protocol_version
            )));
        }
        if !hello.deterministic {
            return Err(Error::predictor("server does not declare deterministic inference"));
        }
        if hello.vocab_size == 0 {
            return Err(Error::predictor("server reports an empty vocabulary"));
        }
        Ok(Self {
            endpoint: endpoint.to_owned(),
            transport,
            next_id: AtomicU64::new(1),
            hello,
        })
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    fn call(&self, mut req: Request) -> Result<Response> {
        req.id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let id = req.id;
        let resp = self.transport.call(&req)?.into_result()?;
        if resp.id != id {
            return Err(Error::predictor(format!("reply id {} for request {id}", resp.id)));
        }
        Ok(resp)
    }

    fn check_length(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() as u64 > self.hello.max_sequence {
            return Err(Error::predictor(format!(
                "{} tokens exceed the server window of {}",
                tokens.len(),
                self.hello.max_sequence
            )));
        }
        Ok(())
    }

    /// Text to ids in the server's own tokenizer space.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let mut req = Request::new(0, Op::Tokenize);
        req.text = Some(text.to_owned());
        self.call(req)?
            .tokens
            .ok_or_else(|| Error::predictor("tokenize reply has no tokens"))
    }

    pub fn detokenize(&self, tokens: &[u32]) -> Result<String> {
        let mut req = Request::new(0, Op::Detokenize);
        req.tokens = tokens.to_vec();
        self.call(req)?
            .text
            .ok_or_else(|| Error::predictor("detokenize reply has no text"))
    }
}

impl Predictor for RemotePredictor {
    fn vocab_size(&self) -> u32 {
        self.hello.vocab_size
    }

    fn surprisal(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        self.check_length(tokens)?;
        let mut req = Request::new(0, Op::Surprisal);
        req.tokens = tokens.to_vec();
        let s = self
            .call(req)?
            .s
            .ok_or_else(|| Error::predictor("surprisal reply has no values"))?;
        if s.len() != tokens.len() {
            return Err(Error::predictor(format!("{} surprisals for {} tokens", s.len(), tokens.len())));
        }
        s.iter()
            .enumerate()
            .map(|(i, v)| parse_prob(v).map_err(|e| Error::predictor_at(i, e.to_string())))
            .collect()
    }

    fn predict(&self, tokens: &[u32], masked: &[usize], top_k: usize) -> Result<Vec<PredictiveDistribution>> {
        if masked.is_empty() {
            return Ok(Vec::new());
        }
        self.check_length(tokens)?;
        let mut req = Request::new(0, Op::Predict);
        req.tokens = tokens.to_vec();
        req.masked = masked.to_vec();
        req.top_k = Some(top_k);
        let dists = self
            .call(req)?
            .dists
            .ok_or_else(|| Error::predictor("predict reply has no distributions"))?;
        if dists.len() != masked.len() {
            return Err(Error::predictor(format!(
                "{} distributions for {} masked positions",
                dists.len(),
                masked.len()
            )));
        }
        dists
            .iter()
            .zip(masked)
            .map(|(w, &pos)| {
                if w.pos != pos {
                    return Err(Error::predictor_at(pos, format!("reply is for position {}", w.pos)));
                }
                dist_from_wire(w, top_k, self.hello.vocab_size)
            })
            .collect()
    }

    /// One single-mask query per position, several in flight at once.
    fn predict_leave_one_out(
        &self,
        tokens: &[u32],
        positions: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        let chunk = positions.len().div_ceil(LOO_FANOUT).max(1);
        let parts: Vec<Result<Vec<PredictiveDistribution>>> = std::thread::scope(|s| {
            let handles: Vec<_> = positions
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        let mut out = Vec::with_capacity(part.len());
                        for &i in part {
                            out.extend(self.predict(tokens, &[i], top_k)?);
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("query thread panicked")).collect()
        });
        let mut out = Vec::with_capacity(positions.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    fn static_bytes(&self) -> u64 {
        self.hello.model_bytes
    }

    fn describe(&self) -> String {
        format!("extern:{} ({})", self.endpoint, self.hello.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(
            "http://127.0.0.1:9000".parse::<Endpoint>().unwrap(),
            Endpoint::Http("http://127.0.0.1:9000/v1".into())
        );
        assert_eq!(
            "http://h/v1/".parse::<Endpoint>().unwrap(),
            Endpoint::Http("http://h/v1".into())
        );
        assert_eq!(
            "stdio:python -m server --stdio".parse::<Endpoint>().unwrap(),
            Endpoint::Stdio(vec!["python".into(), "-m".into(), "server".into(), "--stdio".into()])
        );
        assert!("stdio:  ".parse::<Endpoint>().is_err());
        assert!("tcp://x".parse::<Endpoint>().is_err());
    }

    #[test]
    fn replies_route_by_id_in_any_order() {
        let pending: Pending = Arc::default();
        let (tx1, rx1) = mpsc::channel();
        let (tx2, rx2) = mpsc::channel();
        pending.lock().unwrap().insert(1, tx1);
        pending.lock().unwrap().insert(2, tx2);
        let input = "{\"id\":2,\"s\":[\"1e0\"]}\n\n{\"id\":1,\"s\":[\"2e0\"]}\n";
        assert_eq!(read_replies(input.as_bytes(), &pending), "server exited");
        assert_eq!(rx1.recv().unwrap().s.unwrap(), vec!["2e0"]);
        assert_eq!(rx2.recv().unwrap().s.unwrap(), vec!["1e0"]);
        assert!(pending.lock().unwrap().is_empty());
    }

    #[test]
    fn garbage_ends_the_stream() {
        let pending: Pending = Arc::default();
        assert!(read_replies("not json\n".as_bytes(), &pending).starts_with("unparseable"));
    }
}
