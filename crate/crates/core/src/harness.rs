//! Rate-distortion sweeps over a corpus and the Pareto fronts drawn from
//! them.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{epc_compress, epc_decompress, pm_compress, pm_decompress, Compressed, EpcConfig, PmConfig};
use crate::container::{read_payload, write_payload};
use crate::error::{Error, Result};
use crate::metrics::{amortised_bpc, bpc, char_fidelity, chrf};
use crate::payload::{FallbackMode, Fraction};
use crate::positions::h2;
use crate::predictor::Predictor;
use crate::text::{TokenSeq, Tokenizer};

#[derive(Debug, Clone)]
pub struct Document {
    pub name: String,
    pub seq: TokenSeq,
}

/// Reads every `.txt` file under `dir`, sorted by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, text))
        })
        .collect()
}

pub fn tokenize_corpus(texts: &[(String, String)], tokenizer: &Tokenizer) -> Result<Vec<Document>> {
    texts
        .iter()
        .filter(|(_, t)| !t.is_empty())
        .map(|(name, text)| {
            Ok(Document {
                name: name.clone(),
                seq: tokenizer.encode(text)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SweepCodec {
    Pm,
    Epc(FallbackModeKey),
}

/// `FallbackMode` with an ordering, for stable row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FallbackModeKey {
    Off,
    Budget,
    Full,
}

impl From<FallbackModeKey> for FallbackMode {
    fn from(k: FallbackModeKey) -> Self {
        match k {
            FallbackModeKey::Off => FallbackMode::Off,
            FallbackModeKey::Budget => FallbackMode::Budget,
            FallbackModeKey::Full => FallbackMode::Full,
        }
    }
}

impl SweepCodec {
    pub fn label(self) -> &'static str {
        match self {
            SweepCodec::Pm => "pm",
            SweepCodec::Epc(FallbackModeKey::Off) => "epc-off",
            SweepCodec::Epc(FallbackModeKey::Budget) => "epc-budget",
            SweepCodec::Epc(FallbackModeKey::Full) => "epc-full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pm" => Ok(SweepCodec::Pm),
            "epc-off" => Ok(SweepCodec::Epc(FallbackModeKey::Off)),
            "epc-budget" => Ok(SweepCodec::Epc(FallbackModeKey::Budget)),
            "epc-full" => Ok(SweepCodec::Epc(FallbackModeKey::Full)),
            other => Err(Error::Config(format!("unknown codec '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub p_mask: Vec<Fraction>,
    pub k: Vec<u32>,
    pub codecs: Vec<SweepCodec>,
    pub seeds: Vec<u64>,
    pub beta: Fraction,
    pub pm: PmConfig,
    pub refine_iters: u32,
    pub static_bytes: u64,
    pub n_copies: u64,
}

impl Default for Grid {
    fn default() -> Self {
        let f = |x| Fraction::from_f64(x).expect("grid constant");
        Self {
            p_mask: vec![f(0.2), f(0.4), f(0.6), f(0.8)],
            k: vec![4, 16, 64, 128],
            codecs: vec![
                SweepCodec::Pm,
                SweepCodec::Epc(FallbackModeKey::Off),
                SweepCodec::Epc(FallbackModeKey::Budget),
                SweepCodec::Epc(FallbackModeKey::Full),
            ],
            seeds: (0..5).collect(),
            beta: f(0.25),
            pm: PmConfig::default(),
            refine_iters: 2,
            static_bytes: 0,
            n_copies: 1,
        }
    }
}

/// One (document, configuration, seed) measurement. Field order is the CSV
/// column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub doc: String,
    pub codec: String,
    pub p_mask: f64,
    pub k: Option<u32>,
    pub beta: Option<f64>,
    pub window: u32,
    pub max_run: u32,
    pub seed: u64,
    pub predictor: String,
    pub tokens: u64,
    pub chars: u64,
    pub masked: u64,
    pub bits_pos: u64,
    pub bits_tok: u64,
    pub bits_flag: u64,
    pub bits_rank: u64,
    pub bits_fallback: u64,
    pub bits_container: u64,
    pub payload_bits: u64,
    pub bpc: f64,
    pub amortised_bpc: f64,
    pub char_fid: f64,
    pub chrf: f64,
    /// Always empty: no embedding model is bundled.
    pub bertscore: Option<f64>,
    pub bertscore_status: String,
    pub error_bound: Option<f64>,
    pub masked_error: f64,
    /// `N * H2(1 - p_mask)`, the analytic position cost.
    pub analytic_pos_bits: f64,
    pub ideal_tok_bits: Option<f64>,
    pub ideal_fallback_bits: Option<f64>,
    pub ledger_ok: bool,
    pub seed_invariant: bool,
    pub char_fid_normalizer: String,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    doc: usize,
    codec: SweepCodec,
    p_mask: Fraction,
    k: Option<u32>,
    seed: u64,
}

fn jobs(docs: usize, grid: &Grid) -> Vec<Job> {
    let mut out = Vec::new();
    for doc in 0..docs {
        for &codec in &grid.codecs {
            for &p_mask in &grid.p_mask {
                let ks: Vec<Option<u32>> = match codec {
                    SweepCodec::Pm => vec![None],
                    SweepCodec::Epc(_) => grid.k.iter().map(|&k| Some(k)).collect(),
                };
                for k in ks {
                    for &seed in &grid.seeds {
                        out.push(Job {
                            doc,
                            codec,
                            p_mask,
                            k,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Builds the predictor for one document and seed.
pub type PredictorFactory<'a> = dyn Fn(&Document, u64) -> Result<Arc<dyn Predictor>> + Sync + 'a;

fn run_job(job: Job, doc: &Document, tokenizer: &Tokenizer, grid: &Grid, factory: &PredictorFactory) -> Result<(RdPoint, Vec<u8>)> {
    let predictor = factory(doc, job.seed)?;
    let ids = &doc.seq.ids;
    let chars = doc.seq.char_count();
    let pm = PmConfig {
        p_mask: job.p_mask,
        ..grid.pm
    };
    let started = Instant::now();
    let (out, decoded, error_bound): (Compressed, Vec<u32>, Option<f64>) = match job.codec {
        SweepCodec::Pm => {
            let out = pm_compress(ids, chars, predictor.as_ref(), &pm)?;
            let back = read_payload(&write_payload(&out.payload))?;
            let decoded = pm_decompress(&back, predictor.as_ref())?;
            (out, decoded, None)
        }
        SweepCodec::Epc(mode) => {
            let cfg = EpcConfig {
                pm,
                k: job.k.expect("EPC jobs carry K"),
                mode: mode.into(),
                beta: grid.beta,
                refine_iters: grid.refine_iters,
                top_k: None,
            };
            let out = epc_compress(ids, chars, predictor.as_ref(), &cfg)?;
            let back = read_payload(&write_payload(&out.payload))?;
            let dec = epc_decompress(&back, predictor.as_ref())?;
            (out, dec.tokens, Some(dec.error_bound))
        }
    };
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let bytes = write_payload(&out.payload);
    let ledger = out
        .ledger
        .clone()
        .with_static(8 * grid.static_bytes, grid.n_copies);
    let text = tokenizer.decode_lossy(&decoded)?;
    let masked = out.mask.masked_count();
    let masked_wrong = out.mask.masked().iter().filter(|&&i| decoded[i] != ids[i]).count();
    let n = ids.len() as f64;
    let point = RdPoint {
        doc: doc.name.clone(),
        codec: job.codec.label().into(),
        p_mask: job.p_mask.as_f64(),
        k: job.k,
        beta: matches!(job.codec, SweepCodec::Epc(FallbackModeKey::Budget)).then(|| grid.beta.as_f64()),
        window: grid.pm.window,
        max_run: grid.pm.max_run,
        seed: job.seed,
        predictor: predictor.describe(),
        tokens: ids.len() as u64,
        chars,
        masked: masked as u64,
        bits_pos: ledger.bits_pos,
        bits_tok: ledger.bits_tok,
        bits_flag: ledger.bits_flag,
        bits_rank: ledger.bits_rank,
        bits_fallback: ledger.bits_fallback,
        bits_container: ledger.bits_container,
        payload_bits: ledger.payload_bits(),
        bpc: bpc(&ledger, chars),
        amortised_bpc: amortised_bpc(&ledger, chars),
        char_fid: char_fidelity(&doc.seq.text, &text),
        chrf: chrf(&doc.seq.text, &text, 6, 2.0),
        bertscore: None,
        bertscore_status: "unsupported".into(),
        error_bound,
        masked_error: if masked == 0 { 0.0 } else { masked_wrong as f64 / masked as f64 },
        analytic_pos_bits: n * h2(1.0 - job.p_mask.as_f64()),
        ideal_tok_bits: ledger.ideal_tok,
        ideal_fallback_bits: ledger.ideal_fallback,
        ledger_ok: ledger.payload_bits() == 8 * bytes.len() as u64,
        seed_invariant: true,
        char_fid_normalizer: "max_len".into(),
        wall_ms,
    };
    Ok((point, bytes))
}

/// Runs the grid on `workers` threads. Rows come back in grid order
/// whatever the completion order; `seed_invariant` is false on every row
/// of a configuration whose payload changed with the seed.
pub fn sweep(
    docs: &[Document],
    tokenizer: &Tokenizer,
    grid: &Grid,
    factory: &PredictorFactory,
    workers: usize,
) -> Result<Vec<RdPoint>> {
    use rayon::prelude::*;
    if docs.is_empty() {
        return Err(Error::Input("empty corpus".into()));
    }
    if grid.p_mask.is_empty() || grid.codecs.is_empty() || grid.seeds.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let jobs = jobs(docs.len(), grid);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<(RdPoint, Vec<u8>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&job| run_job(job, &docs[job.doc], tokenizer, grid, factory))
            .collect::<Result<_>>()
    })?;

    let mut reference: HashMap<(usize, SweepCodec, Fraction, Option<u32>), &Vec<u8>> = HashMap::new();
    let mut varies: HashMap<(usize, SweepCodec, Fraction, Option<u32>), bool> = HashMap::new();
    for (job, (_, bytes)) in jobs.iter().zip(&results) {
        let key = (job.doc, job.codec, job.p_mask, job.k);
        let first = *reference.entry(key).or_insert(bytes);
        *varies.entry(key).or_insert(false) |= first != bytes;
    }
    Ok(jobs
        .iter()
        .zip(results)
        .map(|(job, (mut point, _))| {
            point.seed_invariant = !varies[&(job.doc, job.codec, job.p_mask, job.k)];
            point
        })
        .collect())
}

pub fn write_csv<W: std::io::Write>(rows: &[RdPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Input(format!("csv: {e}")))?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<RdPoint>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Input(format!("csv: {e}"))))
        .collect()
}

/// CSV text with the wall-time column blanked, for reproducibility checks.
pub fn csv_without_timing(rows: &[RdPoint]) -> Result<String> {
    let stripped: Vec<RdPoint> = rows.iter().map(|r| RdPoint { wall_ms: 0.0, ..r.clone() }).collect();
    let mut buf = Vec::new();
    write_csv(&stripped, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdSample {
    pub bpc: f64,
    pub char_fid: f64,
    pub p_mask: f64,
    pub k: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub raw: Vec<RdSample>,
    pub front: Vec<RdSample>,
}

/// Fronts that are not worse in both rate and fidelity than another point,
/// ordered by ascending rate with strictly increasing fidelity.
pub fn pareto_front(points: &[RdSample]) -> Vec<RdSample> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.bpc.total_cmp(&b.bpc).then(b.char_fid.total_cmp(&a.char_fid)));
    let mut front: Vec<RdSample> = Vec::new();
    for p in sorted {
        if front.last().is_none_or(|last| p.char_fid > last.char_fid) {
            front.push(p);
        }
    }
    front
}

/// Averages rows over documents and seeds per (codec, p_mask, K), then
/// builds one series per codec. Rate is total bits over total characters.
pub fn plot_data(rows: &[RdPoint]) -> BTreeMap<String, Series> {
    #[derive(Default)]
    struct Acc {
        bits: f64,
        chars: f64,
        fid: f64,
        n: f64,
    }
    let mut groups: BTreeMap<(String, u64, Option<u32>), Acc> = BTreeMap::new();
    for r in rows {
        let acc = groups
            .entry((r.codec.clone(), r.p_mask.to_bits(), r.k))
            .or_default();
        acc.bits += r.payload_bits as f64;
        acc.chars += r.chars as f64;
        acc.fid += r.char_fid;
        acc.n += 1.0;
    }
    let mut raw: BTreeMap<String, Vec<RdSample>> = BTreeMap::new();
    for ((codec, p, k), acc) in groups {
        raw.entry(codec).or_default().push(RdSample {
            bpc: acc.bits / acc.chars.max(1.0),
            char_fid: acc.fid / acc.n,
            p_mask: f64::from_bits(p),
            k,
        });
    }
    raw.into_iter()
        .map(|(codec, raw)| {
            let front = pareto_front(&raw);
            (codec, Series { raw, front })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::BuiltinModel;

    fn sample(bpc: f64, char_fid: f64) -> RdSample {
        RdSample {
            bpc,
            char_fid,
            p_mask: 0.0,
            k: None,
        }
    }

    #[test]
    fn fronts() {
        assert_eq!(pareto_front(&[sample(1.0, 0.5)]), vec![sample(1.0, 0.5)]);
        let pts = [sample(2.0, 0.9), sample(1.0, 0.5), sample(1.5, 0.4), sample(3.0, 0.95), sample(3.0, 0.6)];
        let front = pareto_front(&pts);
        assert_eq!(front, vec![sample(1.0, 0.5), sample(2.0, 0.9), sample(3.0, 0.95)]);
        assert!(front.windows(2).all(|w| w[0].bpc <= w[1].bpc && w[0].char_fid <= w[1].char_fid));
    }

    #[test]
    fn one_config_one_doc_one_row() {
        let tok = Tokenizer::Bytes;
        let docs = tokenize_corpus(&[("a.txt".into(), "the cat sat on the mat. ".repeat(8))], &tok).unwrap();
        let grid = Grid {
            p_mask: vec![Fraction::from_f64(0.4).unwrap()],
            k: vec![4],
            codecs: vec![SweepCodec::Epc(FallbackModeKey::Full)],
            seeds: vec![0],
            ..Default::default()
        };
        let factory = |_: &Document, _: u64| -> Result<Arc<dyn Predictor>> { Ok(Arc::new(BuiltinModel::new(256, 1, 1.0)?)) };
        let rows = sweep(&docs, &tok, &grid, &factory, 2).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert!(r.ledger_ok);
        assert_eq!(r.bits_pos + r.bits_tok + r.bits_flag + r.bits_rank + r.bits_fallback + r.bits_container, r.payload_bits);
        assert_eq!(r.char_fid, 1.0);
        assert_eq!(r.bertscore, None);

        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
        let header = String::from_utf8(buf).unwrap().lines().next().unwrap().to_owned();
        assert!(header.starts_with("doc,codec,p_mask,k,beta,"));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let factory = |_: &Document, _: u64| -> Result<Arc<dyn Predictor>> { Ok(Arc::new(BuiltinModel::new(256, 1, 1.0)?)) };
        assert!(sweep(&[], &Tokenizer::Bytes, &Grid::default(), &factory, 1).is_err());
    }
}
