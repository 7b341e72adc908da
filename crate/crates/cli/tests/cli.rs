use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use maskpress::text::Tokenizer;
use maskpress_server::{Backend, HttpServer};
use tempfile::TempDir;

const TEXT: &str = "Call me Ishmael. Some years ago, never mind how long precisely, having little or no money \
in my purse, and nothing particular to interest me on shore, I thought I would sail about a little and see \
the watery part of the world. Ça va? 日本語も少し。\n";

fn maskpress(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskpress"))
        .args(args)
        .env_remove("MASKPRESS_ENDPOINT")
        .env_remove("MASKPRESS_WORKERS")
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Files {
    dir: TempDir,
}

impl Files {
    fn new() -> Self {
        let f = Self {
            dir: TempDir::new().unwrap(),
        };
        std::fs::write(f.path("in.txt"), TEXT).unwrap();
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn roundtrip(f: &Files, extra: &[&str]) -> (Vec<u8>, serde_json::Value) {
    let (input, packed, back, report) = (f.path("in.txt"), f.path("x.mlc"), f.path("back.txt"), f.path("r.json"));
    let mut args = vec!["compress", s(&input), "-o", s(&packed), "--report", s(&report)];
    args.extend_from_slice(extra);
    ok(maskpress(&args));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let predictor: Vec<&str> = extra
        .windows(2)
        .filter(|w| w[0] == "--predictor")
        .map(|w| w[1])
        .collect();
    let mut args = vec!["decompress", s(&packed), "-o", s(&back)];
    if let Some(p) = predictor.first() {
        args.extend_from_slice(&["--predictor", p]);
    }
    ok(maskpress(&args));
    let size = std::fs::metadata(&packed).unwrap().len();
    assert_eq!(report["payload_bits"], 8 * size);
    (std::fs::read(&back).unwrap(), report)
}

#[test]
fn epc_full_is_lossless() {
    let f = Files::new();
    for tok in ["bytes", "words"] {
        for order in ["builtin:order0", "builtin:order1"] {
            let (back, _) = roundtrip(&f, &["--codec", "epc", "--mode", "full", "-k", "4", "--p-mask", "0.7", "--tokenizer", tok, "--predictor", order]);
            assert_eq!(back, TEXT.as_bytes(), "{tok} {order}");
        }
    }
}

#[test]
fn pm_at_zero_masking_is_lossless() {
    let f = Files::new();
    let (back, report) = roundtrip(&f, &["--codec", "pm", "--p-mask", "0"]);
    assert_eq!(back, TEXT.as_bytes());
    assert_eq!(report["masked"], 0);
}

#[test]
fn lossy_settings_still_decode() {
    let f = Files::new();
    let (back, report) = roundtrip(&f, &["--codec", "pm", "--p-mask", "0.5", "--n-copies", "10"]);
    assert_eq!(back.len(), TEXT.len());
    assert!(report["masked"].as_u64().unwrap() > 0);
    assert!(report["amortised_bpc"].as_f64().unwrap() > report["bpc"].as_f64().unwrap());
}

#[test]
fn corrupt_magic_exits_with_two() {
    let f = Files::new();
    let packed = f.path("x.mlc");
    ok(maskpress(&["compress", s(&f.path("in.txt")), "-o", s(&packed)]));
    let mut bytes = std::fs::read(&packed).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&packed, &bytes).unwrap();
    let out = maskpress(&["decompress", s(&packed)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn corrupt_body_is_a_diagnosed_failure() {
    let f = Files::new();
    let packed = f.path("x.mlc");
    ok(maskpress(&["compress", s(&f.path("in.txt")), "-o", s(&packed)]));
    let mut bytes = std::fs::read(&packed).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&packed, &bytes).unwrap();
    let out = maskpress(&["decompress", s(&packed)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn bad_input_and_flags_are_rejected() {
    let f = Files::new();
    let bad = f.path("bad.txt");
    std::fs::write(&bad, [0x61, 0xff, 0xfe]).unwrap();
    let out = maskpress(&["compress", s(&bad), "-o", s(&f.path("x.mlc"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("UTF-8"));

    let out = maskpress(&["compress", s(&f.path("in.txt")), "-o", s(&f.path("x.mlc")), "--frobnicate"]);
    assert!(!out.status.success());

    let out = maskpress(&["compress", s(&f.path("in.txt")), "-o", s(&f.path("x.mlc")), "--predictor", "builtin:order7"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown predictor"));
}

#[test]
fn settings_file_and_flag_precedence() {
    let f = Files::new();
    let cfg = f.path("run.conf");
    std::fs::write(&cfg, "# lossless run\ncodec = epc\nmode = full\nk = 4\np_mask = 0.8\n").unwrap();
    let (back, report) = roundtrip(&f, &["--config", s(&cfg)]);
    assert_eq!(back, TEXT.as_bytes());
    let masked_08 = report["masked"].as_u64().unwrap();
    let (_, report) = roundtrip(&f, &["--config", s(&cfg), "--p-mask", "0.2"]);
    assert!(report["masked"].as_u64().unwrap() < masked_08);

    std::fs::write(&cfg, "colour = red\n").unwrap();
    let out = maskpress(&["compress", s(&f.path("in.txt")), "-o", s(&f.path("x.mlc")), "--config", s(&cfg)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown setting"));
}

#[test]
fn external_model_over_http() {
    let server = HttpServer::spawn(
        "127.0.0.1:0".parse().unwrap(),
        Arc::new(Backend::builtin(1, 1.0, Tokenizer::Bytes).unwrap()),
    )
    .unwrap();
    let f = Files::new();
    let spec = format!("extern:{}", server.url());
    let (back, report) = roundtrip(&f, &["--mode", "full", "--predictor", &spec]);
    assert_eq!(back, TEXT.as_bytes());
    assert_eq!(report["tokenizer"], "server");

    // the endpoint may also come from the environment
    let packed = f.path("env.mlc");
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_maskpress"))
            .args(args)
            .env("MASKPRESS_ENDPOINT", server.url())
            .output()
            .unwrap()
    };
    ok(run(&["compress", s(&f.path("in.txt")), "-o", s(&packed), "--mode", "full"]));
    let out = ok(run(&["decompress", s(&packed)]));
    assert_eq!(out.stdout, TEXT.as_bytes());
    assert!(String::from_utf8_lossy(&std::fs::read(f.path("env.mlc.tok.json")).unwrap()).contains("server"));
}

fn corpus(f: &Files) -> PathBuf {
    let dir = f.path("corpus");
    std::fs::create_dir(&dir).unwrap();
    std::fs::write(dir.join("a.txt"), TEXT).unwrap();
    std::fs::write(dir.join("b.txt"), "the quick brown fox jumps over the lazy dog. ".repeat(6)).unwrap();
    std::fs::write(dir.join("notes.md"), "ignored").unwrap();
    dir
}

fn strip_wall_time(csv: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "wall_ms").unwrap();
    lines
        .map(|l| {
            let mut cells: Vec<&str> = l.split(',').collect();
            cells[col] = "";
            cells.join(",")
        })
        .collect()
}

#[test]
fn sweep_is_reproducible_and_plots() {
    let f = Files::new();
    let dir = corpus(&f);
    let (a, b, json, plot) = (f.path("a.csv"), f.path("b.csv"), f.path("rows.json"), f.path("plot.json"));
    let base = ["sweep", "--corpus", s(&dir), "--p-masks", "0.2,0.6", "--ks", "4,16", "--seeds", "2"];
    let mut args = base.to_vec();
    args.extend_from_slice(&["-o", s(&a), "--json", s(&json), "--workers", "3"]);
    ok(maskpress(&args));
    let mut args = base.to_vec();
    args.extend_from_slice(&["-o", s(&b), "--workers", "1"]);
    ok(maskpress(&args));

    let (ca, cb) = (std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
    assert_eq!(strip_wall_time(&ca), strip_wall_time(&cb));
    // 2 docs x 2 seeds x (pm at 2 rates + 3 epc modes x 2 rates x 2 K)
    assert_eq!(ca.lines().count() - 1, 2 * 2 * (2 + 3 * 2 * 2));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(rows.len(), ca.lines().count() - 1);
    for r in &rows {
        assert_eq!(r["ledger_ok"], true);
        assert_eq!(r["seed_invariant"], true);
        if r["codec"] == "epc-full" {
            assert_eq!(r["char_fid"], 1.0);
        }
    }

    ok(maskpress(&["plotdata", s(&a), "-o", s(&plot)]));
    let plot: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&plot).unwrap()).unwrap();
    for codec in ["pm", "epc-off", "epc-budget", "epc-full"] {
        let front = plot[codec]["front"].as_array().unwrap();
        assert!(!front.is_empty());
        for w in front.windows(2) {
            assert!(w[0]["bpc"].as_f64() <= w[1]["bpc"].as_f64());
            assert!(w[0]["char_fid"].as_f64() < w[1]["char_fid"].as_f64());
        }
    }
    assert_eq!(plot["pm"]["raw"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_of_an_empty_corpus_fails() {
    let f = Files::new();
    let dir = f.path("empty");
    std::fs::create_dir(&dir).unwrap();
    let out = maskpress(&["sweep", "--corpus", s(&dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty corpus"));
}
