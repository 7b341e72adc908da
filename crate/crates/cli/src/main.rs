mod config;

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use maskpress::codec::{epc_compress, epc_decompress, pm_compress, pm_decompress, Compressed, EpcConfig, PmConfig};
use maskpress::container::{read_payload, write_payload};
use maskpress::harness::{self, Document, Grid, SweepCodec};
use maskpress::metrics::{amortised_bpc, bpc};
use maskpress::payload::{CodecId, FallbackMode, Fraction};
use maskpress::predictor::{BuiltinModel, DeterminismGuard, Predictor};
use maskpress::text::{TokenSeq, Tokenizer};
use maskpress_client::RemotePredictor;
use serde_json::json;

use config::{list, Settings};

#[derive(Parser, Debug)]
#[command(name = "maskpress", version, about = "Lossy text compression with a predictive model as decoder")]
struct Cli {
    /// Settings file of `key = value` lines; flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Text to container.
    Compress(CompressArgs),
    /// Container back to text.
    Decompress(DecompressArgs),
    /// Rate-distortion sweep over a corpus directory.
    Sweep(SweepArgs),
    /// Pareto fronts from a sweep CSV.
    Plotdata(PlotArgs),
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// builtin:order0, builtin:order1 or extern:<http://host:port | stdio:command>
    #[arg(long)]
    predictor: Option<String>,
    /// bytes, words, or server (the external model's own tokenizer)
    #[arg(long)]
    tokenizer: Option<String>,
    /// Model and tokenizer bytes charged to the amortised rate.
    #[arg(long)]
    static_bytes: Option<u64>,
    /// Documents the static bytes are shared across.
    #[arg(long)]
    n_copies: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct CodecArgs {
    #[arg(long)]
    p_mask: Option<f64>,
    #[arg(long)]
    window: Option<u32>,
    #[arg(long)]
    max_run: Option<u32>,
    #[arg(long)]
    aux_order: Option<u8>,
    #[arg(long)]
    infill_chunk: Option<u32>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    refine_iters: Option<u32>,
}

#[derive(Args, Debug)]
struct CompressArgs {
    /// Input text; stdin when absent or `-`.
    input: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// pm or epc
    #[arg(long)]
    codec: Option<String>,
    #[arg(short, long)]
    k: Option<u32>,
    /// off, budget or full
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    top_k: Option<u32>,
    /// Extra files whose words join the word vocabulary.
    #[arg(long)]
    vocab_from: Vec<PathBuf>,
    /// Write a JSON cost report here (`-` for stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    codec_args: CodecArgs,
}

#[derive(Args, Debug)]
struct DecompressArgs {
    input: PathBuf,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Tokenizer file; defaults to the one written next to the input.
    #[arg(long)]
    tokenizer_file: Option<PathBuf>,
    #[arg(long)]
    predictor: Option<String>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Directory of .txt documents.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// CSV output; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the rows as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Comma-separated masking rates.
    #[arg(long)]
    p_masks: Option<String>,
    #[arg(long)]
    ks: Option<String>,
    /// Comma-separated: pm, epc-off, epc-budget, epc-full
    #[arg(long)]
    codecs: Option<String>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    codec_args: CodecArgs,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Sweep CSV; stdin when absent or `-`.
    input: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<maskpress::Error> for Failure {
    fn from(e: maskpress::Error) -> Self {
        let code = if e == maskpress::Error::BadMagic { 2 } else { 1 };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<String> for Failure {
    fn from(message: String) -> Self {
        Self { code: 1, message }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::from(format!("{}: {e}", path.display()))
}

fn read_input(path: Option<&Path>) -> Outcome<Vec<u8>> {
    match path {
        Some(p) if p != Path::new("-") => fs::read(p).map_err(io_err(p)),
        _ => {
            let mut buf = Vec::new();
            std::io::stdin()
                .read_to_end(&mut buf)
                .map_err(|e| format!("stdin: {e}"))?;
            Ok(buf)
        }
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Outcome {
    match path {
        Some(p) if p != Path::new("-") => fs::write(p, bytes).map_err(io_err(p)),
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| format!("stdout: {e}").into())
        }
    }
}

fn sidecar(container: &Path) -> PathBuf {
    let mut s = container.as_os_str().to_owned();
    s.push(".tok.json");
    PathBuf::from(s)
}

enum Model {
    Builtin(u8),
    Extern(String),
}

fn parse_model(spec: &str) -> Outcome<Model> {
    match spec {
        "builtin:order0" => Ok(Model::Builtin(0)),
        "builtin:order1" => Ok(Model::Builtin(1)),
        _ => match spec.strip_prefix("extern:") {
            Some(ep) if !ep.is_empty() => Ok(Model::Extern(ep.to_owned())),
            _ => Err(format!("unknown predictor '{spec}'").into()),
        },
    }
}

/// How text becomes ids: a local tokenizer, or the external server's own.
enum TextMap {
    Local(Tokenizer),
    Server,
}

const SERVER_TOKENIZER: &str = r#"{"kind":"server"}"#;

impl TextMap {
    fn to_json(&self) -> String {
        match self {
            TextMap::Local(t) => t.to_json(),
            TextMap::Server => SERVER_TOKENIZER.to_owned(),
        }
    }

    fn from_json(text: &str) -> Outcome<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("tokenizer file: {e}"))?;
        if v["kind"] == "server" {
            return Ok(TextMap::Server);
        }
        Ok(TextMap::Local(Tokenizer::from_json(text)?))
    }
}

struct Loaded {
    predictor: Arc<dyn Predictor>,
    remote: Option<Arc<RemotePredictor>>,
}

fn load_predictor(spec: &str, vocab: Option<u32>) -> Outcome<Loaded> {
    match parse_model(spec)? {
        Model::Builtin(order) => {
            let vocab = vocab.ok_or("the builtin model needs a local tokenizer".to_owned())?;
            Ok(Loaded {
                predictor: Arc::new(BuiltinModel::new(vocab, order, 1.0)?),
                remote: None,
            })
        }
        Model::Extern(ep) => {
            let remote = Arc::new(RemotePredictor::connect(&ep)?);
            if let Some(v) = vocab {
                if v != remote.vocab_size() {
                    return Err(format!(
                        "tokenizer has {v} ids but the server's vocabulary has {}",
                        remote.vocab_size()
                    )
                    .into());
                }
            }
            Ok(Loaded {
                predictor: Arc::new(DeterminismGuard::new(Arc::clone(&remote))),
                remote: Some(remote),
            })
        }
    }
}

fn pm_config(s: &Settings, a: &CodecArgs) -> Outcome<PmConfig> {
    let d = PmConfig::default();
    let p = s.pick(a.p_mask, "p-mask", d.p_mask.as_f64())?;
    let cfg = PmConfig {
        p_mask: Fraction::from_f64(p)?,
        window: s.pick(a.window, "window", d.window)?,
        max_run: s.pick(a.max_run, "max-run", d.max_run)?,
        aux_order: s.pick(a.aux_order, "aux-order", d.aux_order)?,
        infill_chunk: s.pick(a.infill_chunk, "infill-chunk", d.infill_chunk)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(path: Option<&Path>, report: serde_json::Value) -> Outcome {
    if let Some(p) = path {
        let mut text = serde_json::to_string_pretty(&report).expect("json");
        text.push('\n');
        write_output(Some(p), text.as_bytes())?;
    }
    Ok(())
}

fn compress(s: &Settings, a: CompressArgs) -> Outcome {
    let raw = read_input(a.input.as_deref())?;
    let text = String::from_utf8(raw).map_err(|_| "input is not valid UTF-8".to_owned())?;
    let spec = s.predictor(a.model.predictor.clone())?;
    let is_extern = matches!(parse_model(&spec)?, Model::Extern(_));
    let tok_name = s.pick(a.model.tokenizer.clone(), "tokenizer", if is_extern { "server" } else { "bytes" }.to_owned())?;
    let map = match tok_name.as_str() {
        "bytes" => TextMap::Local(Tokenizer::Bytes),
        "words" => {
            let mut texts = vec![text.clone()];
            for p in &a.vocab_from {
                texts.push(fs::read_to_string(p).map_err(io_err(p))?);
            }
            TextMap::Local(Tokenizer::words_from_corpus(texts.iter().map(String::as_str)))
        }
        "server" if is_extern => TextMap::Server,
        "server" => return Err("tokenizer 'server' needs an extern: predictor".to_owned().into()),
        other => return Err(format!("unknown tokenizer '{other}'").into()),
    };
    let loaded = load_predictor(
        &spec,
        match &map {
            TextMap::Local(t) => Some(t.vocab_size()),
            TextMap::Server => None,
        },
    )?;
    let seq = match &map {
        TextMap::Local(t) => t.encode(&text)?,
        TextMap::Server => TokenSeq {
            ids: loaded.remote.as_ref().expect("extern").tokenize(&text)?,
            text,
        },
    };
    if seq.is_empty() {
        return Err("input is empty; there is nothing to compress".to_owned().into());
    }
    let predictor = loaded.predictor.as_ref();
    let pm = pm_config(s, &a.codec_args)?;
    let codec = s.pick(a.codec.clone(), "codec", "epc".to_owned())?;
    let chars = seq.char_count();
    let out: Compressed = match codec.as_str() {
        "pm" => pm_compress(&seq.ids, chars, predictor, &pm)?,
        "epc" => {
            let d = EpcConfig::default();
            let cfg = EpcConfig {
                pm,
                k: s.pick(a.k, "k", d.k)?,
                mode: s.pick::<FallbackMode>(
                    a.mode.as_deref().map(str::parse).transpose()?,
                    "mode",
                    d.mode,
                )?,
                beta: Fraction::from_f64(s.pick(a.codec_args.beta, "beta", d.beta.as_f64())?)?,
                refine_iters: s.pick(a.codec_args.refine_iters, "refine-iters", d.refine_iters)?,
                top_k: s.pick_opt(a.top_k, "top-k")?,
            };
            cfg.validate()?;
            epc_compress(&seq.ids, chars, predictor, &cfg)?
        }
        other => return Err(format!("unknown codec '{other}' (pm or epc)").into()),
    };

    let bytes = write_payload(&out.payload);
    fs::write(&a.output, &bytes).map_err(io_err(&a.output))?;
    let side = sidecar(&a.output);
    let map_json = map.to_json();
    fs::write(&side, &map_json).map_err(io_err(&side))?;

    let tokenizer_bytes = if matches!(map, TextMap::Local(Tokenizer::Words { .. })) { map_json.len() as u64 } else { 0 };
    let static_bytes = s.pick(a.model.static_bytes, "static-bytes", predictor.static_bytes() + tokenizer_bytes)?;
    let n_copies = s.pick(a.model.n_copies, "n-copies", 1)?;
    let ledger = out.ledger.with_static(8 * static_bytes, n_copies);
    write_report(
        a.report.as_deref(),
        json!({
            "codec": codec,
            "predictor": predictor.describe(),
            "tokenizer": tok_name,
            "tokens": seq.ids.len(),
            "chars": chars,
            "masked": out.mask.masked_count(),
            "ledger": ledger,
            "payload_bits": ledger.payload_bits(),
            "bpc": bpc(&ledger, chars),
            "amortised_bpc": amortised_bpc(&ledger, chars),
        }),
    )
}

fn decompress(s: &Settings, a: DecompressArgs) -> Outcome {
    let bytes = fs::read(&a.input).map_err(io_err(&a.input))?;
    let payload = read_payload(&bytes)?;
    let side = a.tokenizer_file.clone().unwrap_or_else(|| sidecar(&a.input));
    let map = match fs::read_to_string(&side) {
        Ok(text) => TextMap::from_json(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && a.tokenizer_file.is_none() => TextMap::Local(Tokenizer::Bytes),
        Err(e) => return Err(io_err(&side)(e)),
    };
    let spec = s.predictor(a.predictor.clone())?;
    let loaded = load_predictor(
        &spec,
        match &map {
            TextMap::Local(t) => Some(t.vocab_size()),
            TextMap::Server => None,
        },
    )?;
    let predictor = loaded.predictor.as_ref();
    let (ids, error_bound) = match payload.header.codec {
        CodecId::Pm => (pm_decompress(&payload, predictor)?, None),
        CodecId::Epc => {
            let d = epc_decompress(&payload, predictor)?;
            (d.tokens, Some(d.error_bound))
        }
        other => return Err(format!("a {} payload is a patch, not a document", other.name()).into()),
    };
    let out = match &map {
        TextMap::Local(t) => t.decode(&ids)?,
        TextMap::Server => loaded.remote.as_ref().expect("extern").detokenize(&ids)?.into_bytes(),
    };
    write_output(a.output.as_deref(), &out)?;
    write_report(
        a.report.as_deref(),
        json!({
            "codec": payload.header.codec.name(),
            "predictor": predictor.describe(),
            "tokens": ids.len(),
            "error_bound": error_bound,
        }),
    )
}

fn sweep(s: &Settings, a: SweepArgs) -> Outcome {
    let corpus = s.pick(a.corpus.clone(), "corpus", PathBuf::from("corpus"))?;
    let texts = harness::load_corpus(&corpus)?;
    let tok_name = s.pick(a.model.tokenizer.clone(), "tokenizer", "bytes".to_owned())?;
    let tokenizer = match tok_name.as_str() {
        "bytes" => Tokenizer::Bytes,
        "words" => Tokenizer::words_from_corpus(texts.iter().map(|(_, t)| t.as_str())),
        other => return Err(format!("sweeps need a local tokenizer, not '{other}'").into()),
    };
    let docs = harness::tokenize_corpus(&texts, &tokenizer)?;
    let spec = s.predictor(a.model.predictor.clone())?;
    let loaded = load_predictor(&spec, Some(tokenizer.vocab_size()))?;

    let d = Grid::default();
    let pm = pm_config(s, &a.codec_args)?;
    let p_mask = match s.pick_opt(a.p_masks.clone(), "p-masks")? {
        Some(v) => list::<f64>(&v)?
            .into_iter()
            .map(Fraction::from_f64)
            .collect::<Result<_, _>>()?,
        None => d.p_mask.clone(),
    };
    let grid = Grid {
        p_mask,
        k: match s.pick_opt(a.ks.clone(), "ks")? {
            Some(v) => list(&v)?,
            None => d.k.clone(),
        },
        codecs: match s.pick_opt(a.codecs.clone(), "codecs")? {
            Some(v) => v.split(',').map(|c| SweepCodec::parse(c.trim())).collect::<Result<_, _>>()?,
            None => d.codecs.clone(),
        },
        seeds: (0..s.pick(a.seeds, "seeds", d.seeds.len() as u64)?).collect(),
        beta: Fraction::from_f64(s.pick(a.codec_args.beta, "beta", d.beta.as_f64())?)?,
        pm,
        refine_iters: s.pick(a.codec_args.refine_iters, "refine-iters", d.refine_iters)?,
        static_bytes: s.pick(a.model.static_bytes, "static-bytes", loaded.predictor.static_bytes())?,
        n_copies: s.pick(a.model.n_copies, "n-copies", docs.len() as u64)?,
    };
    let workers = s.workers(a.workers)?;
    let shared = Arc::clone(&loaded.predictor);
    let factory = move |_: &Document, _: u64| -> maskpress::Result<Arc<dyn Predictor>> { Ok(Arc::clone(&shared)) };
    let rows = harness::sweep(&docs, &tokenizer, &grid, &factory, workers)?;

    let mut csv = Vec::new();
    harness::write_csv(&rows, &mut csv)?;
    write_output(a.output.as_deref(), &csv)?;
    if let Some(p) = &a.json {
        let text = serde_json::to_string_pretty(&rows).expect("json");
        fs::write(p, text).map_err(io_err(p))?;
    }
    let unstable: Vec<&str> = rows
        .iter()
        .filter(|r| !r.seed_invariant)
        .map(|r| r.doc.as_str())
        .collect();
    if !unstable.is_empty() {
        return Err(format!("payload changed between seeds for {} rows (first: {})", unstable.len(), unstable[0]).into());
    }
    eprintln!("{} rows over {} documents", rows.len(), docs.len());
    Ok(())
}

fn plotdata(a: PlotArgs) -> Outcome {
    let raw = read_input(a.input.as_deref())?;
    let rows = harness::read_csv(raw.as_slice())?;
    let mut text = serde_json::to_string_pretty(&harness::plot_data(&rows)).expect("json");
    text.push('\n');
    write_output(a.output.as_deref(), text.as_bytes())
}

fn run(cli: Cli) -> Outcome {
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Compress(a) => compress(&settings, a),
        Command::Decompress(a) => decompress(&settings, a),
        Command::Sweep(a) => sweep(&settings, a),
        Command::Plotdata(a) => plotdata(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("maskpress: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
