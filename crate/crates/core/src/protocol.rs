//! Predictor wire protocol: one JSON object per request and per response,
//! newline-delimited over stdio or one per `POST /v1`.
//!
//! Probabilities travel as decimal strings with 17 significant digits, so
//! every `f64` survives the trip exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{sort_ranked, PredictiveDistribution, Predictor};
use crate::text::Tokenizer;

pub const PROTOCOL_VERSION: u32 = 1;
/// Allowed gap between 1 and `sum(top) + tail_mass`.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Hello,
    Predict,
    Surprisal,
    Tokenize,
    Detokenize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masked: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Request {
    pub fn new(id: u64, op: Op) -> Self {
        Self {
            id,
            op,
            tokens: Vec::new(),
            masked: Vec::new(),
            top_k: None,
            text: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireDist {
    pub pos: usize,
    pub top: Vec<(u32, String)>,
    pub tail_mass: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol_version: u32,
    pub vocab_size: u32,
    pub max_sequence: u64,
    pub deterministic: bool,
    pub model_bytes: u64,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub hello: Option<Hello>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dists: Option<Vec<WireDist>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl Response {
    fn empty(id: u64) -> Self {
        Self {
            id,
            hello: None,
            dists: None,
            s: None,
            tokens: None,
            text: None,
            error: None,
        }
    }

    pub fn error(id: u64, code: &str, message: impl Into<String>) -> Self {
        Self {
            error: Some(WireError {
                code: code.into(),
                message: message.into(),
            }),
            ..Self::empty(id)
        }
    }

    /// Turns an error response into an [`Error::Predictor`].
    pub fn into_result(self) -> Result<Self> {
        match self.error {
            Some(e) => Err(Error::predictor(format!("{}: {}", e.code, e.message))),
            None => Ok(self),
        }
    }
}

pub fn format_prob(p: f64) -> String {
    format!("{p:.16e}")
}

pub fn parse_prob(s: &str) -> Result<f64> {
    let p: f64 = s
        .parse()
        .map_err(|_| Error::predictor(format!("probability {s:?} is not a decimal number")))?;
    if !p.is_finite() || p < 0.0 {
        return Err(Error::predictor(format!("probability {s:?} out of range")));
    }
    Ok(p)
}

pub fn dist_to_wire(d: &PredictiveDistribution) -> WireDist {
    WireDist {
        pos: d.position,
        top: d.top.iter().map(|&(t, p)| (t, format_prob(p))).collect(),
        tail_mass: format_prob(d.tail_mass),
    }
}

/// Parses and validates one distribution: positive probabilities, at most
/// `top_k` entries, no repeated token, and mass within tolerance of 1. The
/// list is re-ranked locally so ordering never depends on the server.
pub fn dist_from_wire(w: &WireDist, top_k: usize, vocab: u32) -> Result<PredictiveDistribution> {
    let at = |m: String| Error::predictor_at(w.pos, m);
    if w.top.is_empty() || w.top.len() > top_k {
        return Err(at(format!("{} entries for top_k {top_k}", w.top.len())));
    }
    let mut top = Vec::with_capacity(w.top.len());
    for (t, p) in &w.top {
        let p = parse_prob(p)?;
        if p <= 0.0 {
            return Err(at(format!("token {t} has probability 0")));
        }
        if *t >= vocab {
            return Err(at(format!("token {t} outside vocabulary")));
        }
        top.push((*t, p));
    }
    sort_ranked(&mut top);
    let mut ids: Vec<u32> = top.iter().map(|e| e.0).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(at("token listed twice".into()));
    }
    let tail_mass = parse_prob(&w.tail_mass)?;
    let d = PredictiveDistribution {
        position: w.pos,
        top,
        tail_mass,
    };
    if (d.total_mass() - 1.0).abs() > MASS_TOLERANCE {
        return Err(at(format!("probabilities sum to {}", d.total_mass())));
    }
    Ok(d)
}

/// Static facts a server reports in its handshake.
#[derive(Debug, Clone)]
pub struct ServerInfo {
    pub max_sequence: u64,
}

impl Default for ServerInfo {
    fn default() -> Self {
        Self { max_sequence: 1 << 20 }
    }
}

fn check_masked(req: &Request) -> std::result::Result<(), String> {
    if req.masked.windows(2).any(|w| w[0] >= w[1]) {
        return Err("masked positions must be sorted and unique".into());
    }
    if let Some(&i) = req.masked.iter().find(|&&i| i >= req.tokens.len()) {
        return Err(format!("masked position {i} outside sequence"));
    }
    Ok(())
}

/// Server-side dispatch of one request against a predictor.
pub fn handle(req: Request, predictor: &dyn Predictor, tokenizer: Option<&Tokenizer>, info: &ServerInfo) -> Response {
    let id = req.id;
    if req.tokens.len() as u64 > info.max_sequence {
        return Response::error(id, "too_long", format!("sequence longer than {}", info.max_sequence));
    }
    let predictor_error = |e: Error| Response::error(id, "predictor_error", e.to_string());
    match req.op {
        Op::Hello => Response {
            hello: Some(Hello {
                protocol_version: PROTOCOL_VERSION,
                vocab_size: predictor.vocab_size(),
                max_sequence: info.max_sequence,
                deterministic: true,
                model_bytes: predictor.static_bytes(),
                model: predictor.describe(),
            }),
            ..Response::empty(id)
        },
        Op::Predict => {
            if let Err(m) = check_masked(&req) {
                return Response::error(id, "bad_request", m);
            }
            let top_k = match req.top_k {
                Some(k) if k >= 1 => k,
                _ => return Response::error(id, "bad_request", "top_k must be at least 1"),
            };
            match predictor.predict(&req.tokens, &req.masked, top_k) {
                Ok(dists) => Response {
                    dists: Some(dists.iter().map(dist_to_wire).collect()),
                    ..Response::empty(id)
                },
                Err(e) => predictor_error(e),
            }
        }
        Op::Surprisal => match predictor.surprisal(&req.tokens) {
            Ok(s) => Response {
                s: Some(s.into_iter().map(format_prob).collect()),
                ..Response::empty(id)
            },
            Err(e) => predictor_error(e),
        },
        Op::Tokenize | Op::Detokenize => {
            let Some(tok) = tokenizer else {
                return Response::error(id, "unsupported_op", "server has no tokenizer");
            };
            if req.op == Op::Tokenize {
                match tok.encode(req.text.as_deref().unwrap_or("")) {
                    Ok(seq) => Response {
                        tokens: Some(seq.ids),
                        ..Response::empty(id)
                    },
                    Err(e) => Response::error(id, "bad_request", e.to_string()),
                }
            } else {
                match tok.decode(&req.tokens).map(|b| String::from_utf8(b)) {
                    Ok(Ok(text)) => Response {
                        text: Some(text),
                        ..Response::empty(id)
                    },
                    Ok(Err(_)) => Response::error(id, "bad_request", "tokens do not decode to UTF-8"),
                    Err(e) => Response::error(id, "bad_request", e.to_string()),
                }
            }
        }
    }
}

/// Parses one request line and answers it; malformed input gets an error
/// response with id 0 rather than silence.
pub fn handle_line(line: &str, predictor: &dyn Predictor, tokenizer: Option<&Tokenizer>, info: &ServerInfo) -> String {
    let response = match serde_json::from_str::<Request>(line) {
        Ok(req) => handle(req, predictor, tokenizer, info),
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                .unwrap_or(0);
            Response::error(id, "bad_request", e.to_string())
        }
    };
    serde_json::to_string(&response).expect("responses serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::BuiltinModel;
    use proptest::prelude::*;

    #[test]
    fn request_wire_shape() {
        let req: Request =
            serde_json::from_str(r#"{"id":3,"op":"predict","tokens":[0,0,1],"masked":[1],"top_k":2}"#).unwrap();
        assert_eq!(req.op, Op::Predict);
        assert_eq!(req.masked, vec![1]);
        let hello: Request = serde_json::from_str(r#"{"id":1,"op":"hello"}"#).unwrap();
        assert_eq!(hello, Request::new(1, Op::Hello));
    }

    #[test]
    fn predict_answer_is_golden() {
        let m = BuiltinModel::new(2, 0, 1.0).unwrap();
        let line = r#"{"id":7,"op":"predict","tokens":[0,0,1,0],"masked":[3],"top_k":2}"#;
        assert_eq!(
            handle_line(line, &m, None, &ServerInfo::default()),
            r#"{"id":7,"dists":[{"pos":3,"top":[[0,"5.9999999999999998e-1"],[1,"4.0000000000000002e-1"]],"tail_mass":"0.0000000000000000e0"}]}"#
        );
    }

    #[test]
    fn errors_carry_codes_and_ids() {
        let m = BuiltinModel::new(2, 0, 1.0).unwrap();
        let info = ServerInfo::default();
        let bad = handle_line(r#"{"id":9,"op":"predict","tokens":[0],"masked":[4],"top_k":1}"#, &m, None, &info);
        let r: Response = serde_json::from_str(&bad).unwrap();
        assert_eq!(r.id, 9);
        assert_eq!(r.error.unwrap().code, "bad_request");
        let junk: Response = serde_json::from_str(&handle_line("{nope", &m, None, &info)).unwrap();
        assert_eq!(junk.error.unwrap().code, "bad_request");
        let tok: Response =
            serde_json::from_str(&handle_line(r#"{"id":2,"op":"tokenize","text":"hi"}"#, &m, None, &info)).unwrap();
        assert_eq!(tok.error.unwrap().code, "unsupported_op");
    }

    #[test]
    fn hello_reports_model_size() {
        let m = BuiltinModel::new(256, 1, 1.0).unwrap();
        let r = handle(Request::new(1, Op::Hello), &m, None, &ServerInfo::default());
        let h = r.hello.unwrap();
        assert_eq!(h.vocab_size, 256);
        assert_eq!(h.model_bytes, 4 * (256 + 256 * 256));
        assert!(h.deterministic);
    }

    #[test]
    fn wire_validation() {
        let ok = WireDist {
            pos: 0,
            top: vec![(1, "0.25".into()), (0, "0.75".into())],
            tail_mass: "0".into(),
        };
        let d = dist_from_wire(&ok, 2, 4).unwrap();
        assert_eq!(d.top, vec![(0, 0.75), (1, 0.25)]);
        assert!(dist_from_wire(&ok, 1, 4).is_err());
        assert!(dist_from_wire(&ok, 2, 1).is_err());
        let short = WireDist {
            tail_mass: "0.1".into(),
            ..ok.clone()
        };
        assert!(dist_from_wire(&short, 2, 4).is_err());
        let dup = WireDist {
            top: vec![(1, "0.5".into()), (1, "0.5".into())],
            ..ok
        };
        assert!(dist_from_wire(&dup, 2, 4).is_err());
    }

    proptest! {
        #[test]
        fn probabilities_roundtrip_exactly(p in 0.0f64..=1.0) {
            prop_assert_eq!(parse_prob(&format_prob(p)).unwrap().to_bits(), p.to_bits());
        }
    }
}
