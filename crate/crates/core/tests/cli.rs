use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use segmark::codec::{step_table, WatermarkParams};
use segmark::providers::{NgramModel, Provider};

const CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/traffic_corpus.txt");

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Trains a model and creates a key pair.
    fn new() -> Self {
        let ws = Self {
            dir: TempDir::new().unwrap(),
        };
        let out = ws.run(&["train-provider", "--corpus", CORPUS, "--out", ws.s("model.json")]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let out = ws.run(&["keygen", "--out-pub", ws.s("owner.pub"), "--out-priv", ws.s("owner.key")]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::write(ws.p("prompt.txt"), "Drivers on the").unwrap();
        ws
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> &'static str {
        Box::leak(self.p(name).to_string_lossy().into_owned().into_boxed_str())
    }

    fn provider(&self) -> String {
        format!("ngram:{}", self.p("model.json").display())
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_segmark"))
            .args(args)
            .env_remove("SEGMARK_PROVIDER")
            .output()
            .unwrap()
    }

    fn embed(&self, message: &str, extra: &[&str]) -> Output {
        let provider = self.provider();
        let mut args = vec![
            "embed",
            "--provider",
            &provider,
            "--prompt",
            self.s("prompt.txt"),
            "--message",
            message,
            "--pubkey",
            self.s("owner.pub"),
            "--out-text",
            self.s("wm.txt"),
            "--out-cipher",
            self.s("wm.cipher"),
            "--force",
        ];
        args.extend_from_slice(extra);
        self.run(&args)
    }

    fn extract(&self, text: &str, key: &str) -> Output {
        let provider = self.provider();
        self.run(&[
            "extract",
            "--provider",
            &provider,
            "--text",
            self.s(text),
            "--cipher",
            self.s("wm.cipher"),
            "--privkey",
            self.s(key),
        ])
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn replace_word(text: &str, index: usize, word: &str) -> String {
    let mut words: Vec<&str> = text.split(' ').collect();
    words[index] = word;
    words.join(" ")
}

#[test]
fn full_pipeline_round_trip() {
    let ws = Workspace::new();
    let out = ws.embed("ITS copyright 2024", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&out);
    assert_eq!(report["message_bits"], 144);
    assert_eq!(report["mode"], "full");
    assert!(report["watermark_length"].as_u64().unwrap() >= 144);

    let out = ws.extract("wm.txt", "owner.key");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let got = json(&out);
    assert_eq!(got["message"], "ITS copyright 2024");
    assert_eq!(got["residue"], false);
    assert_eq!(got["length"], 144);
}

#[test]
fn bits_message_has_no_text_form() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.embed("bits:1011001110", &[])), 0);
    let got = json(&ws.extract("wm.txt", "owner.key"));
    assert_eq!(got["bits"], "1011001110");
    assert!(got["message"].is_null());
    assert!(got["residue"].is_null());
}

#[test]
fn wrong_key_prints_no_message() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.embed("secret", &[])), 0);
    let out = ws.run(&["keygen", "--out-pub", ws.s("other.pub"), "--out-priv", ws.s("other.key")]);
    assert_eq!(code(&out), 0);
    let out = ws.extract("wm.txt", "other.key");
    assert_eq!(code(&out), 6);
    assert!(out.stdout.is_empty());
    assert!(!String::from_utf8_lossy(&out.stderr).contains("secret"));
}

#[test]
fn keygen_errors() {
    let ws = Workspace::new();
    let out = ws.run(&["keygen", "--out-pub", ws.s("owner.pub"), "--out-priv", ws.s("x.key")]);
    assert_eq!(code(&out), 3);
    let out = ws.run(&["keygen", "--algo", "rsa", "--out-pub", ws.s("a.pub"), "--out-priv", ws.s("a.key")]);
    assert_eq!(code(&out), 2);
    let out = ws.run(&["keygen", "--force", "--out-pub", ws.s("owner.pub"), "--out-priv", ws.s("owner.key")]);
    assert_eq!(code(&out), 0);
}

#[test]
fn tampered_text_reports_first_position() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.embed("AB", &[])), 0);
    let text = fs::read_to_string(ws.p("wm.txt")).unwrap();

    // Swap the third generated word for one the model gives no mass to.
    let model = NgramModel::load(&ws.p("model.json")).unwrap();
    let mut context = model.tokenize("Drivers on the").unwrap();
    context.extend(model.tokenize(&text).unwrap().into_iter().take(2));
    let table = step_table(&model, &context, &WatermarkParams::default(), 16).unwrap();
    let outsider = model
        .vocabulary()
        .tokens()
        .iter()
        .enumerate()
        .find(|(i, _)| table.locate(segmark::providers::TokenId(*i as u32)).is_none())
        .map(|(_, w)| w.clone())
        .unwrap();
    fs::write(ws.p("bad.txt"), replace_word(&text, 2, &outsider)).unwrap();
    let out = ws.extract("bad.txt", "owner.key");
    assert_eq!(code(&out), 7, "{}", stderr(&out));
    assert_eq!(json(&out)["position"], 2);

    fs::write(ws.p("oov.txt"), replace_word(&text, 0, "zebra-crossing-xyz")).unwrap();
    let out = ws.extract("oov.txt", "owner.key");
    assert_eq!(code(&out), 7);
    assert_eq!(json(&out)["position"], 0);
}

#[test]
fn truncated_text_is_short() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.embed("a longer copyright notice", &[])), 0);
    let text = fs::read_to_string(ws.p("wm.txt")).unwrap();
    let head: Vec<&str> = text.split_whitespace().take(3).collect();
    fs::write(ws.p("short.txt"), head.join(" ")).unwrap();
    let out = ws.extract("short.txt", "owner.key");
    assert_eq!(code(&out), 8);
    assert_eq!(json(&out)["expected"], 200);
}

#[test]
fn oversize_message_is_incomplete() {
    let ws = Workspace::new();
    let out = ws.embed("this message cannot fit in three tokens", &["--max-tokens", "3"]);
    assert_eq!(code(&out), 4);
    let detail = json(&out);
    assert_eq!(detail["error"], "watermark_incomplete");
    assert!(detail["remaining"].as_u64().unwrap() > 0);
    assert!(!ws.p("wm.cipher").exists());
}

#[test]
fn partial_mode_round_trip() {
    let ws = Workspace::new();
    let doc = fs::read_to_string(CORPUS).unwrap();
    let first = doc.lines().next().unwrap();
    let spans = segmark::partial::split_sentences(first);
    fs::write(ws.p("base.txt"), &first[..spans[3].bytes.end]).unwrap();
    let out = ws.embed("bits:10110011", &["--eta", "0.5", "--base", ws.s("base.txt")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&out);
    assert_eq!(report["mode"], "partial");
    assert_eq!(report["sentence_indices"].as_array().unwrap().len(), 2);
    let got = json(&ws.extract("wm.txt", "owner.key"));
    assert_eq!(got["mode"], "partial");
    assert_eq!(got["bits"], "10110011");
}

#[test]
fn trace_attack_and_labels() {
    let ws = Workspace::new();
    let model = NgramModel::load(&ws.p("model.json")).unwrap();
    let mut context = model.tokenize("Drivers on the").unwrap();
    let start = context.len();
    for _ in 0..40 {
        context.push(model.next_distribution(&context).unwrap().argmax().unwrap());
    }
    fs::write(ws.p("clean.txt"), model.detokenize(&context[start..]).unwrap()).unwrap();
    let provider = ws.provider();

    let out = ws.run(&[
        "trace", "--provider", &provider, "--text", ws.s("clean.txt"), "--prompt", ws.s("prompt.txt"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&out);
    let records = report["records"].as_array().unwrap();
    assert_eq!(records.len(), 40);
    assert!(records.iter().all(|r| r["tp"] == 0.0));

    let out = ws.run(&[
        "attack", "--provider", &provider, "--text", ws.s("clean.txt"), "--rate", "0", "--seed", "3",
        "--out-text", ws.s("same.txt"), "--out-labels", ws.s("same.json"),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(ws.p("same.txt")).unwrap(), fs::read(ws.p("clean.txt")).unwrap());

    let out = ws.run(&[
        "attack", "--provider", &provider, "--text", ws.s("clean.txt"), "--rate", "0.2", "--seed", "3",
        "--out-text", ws.s("attacked.txt"), "--out-labels", ws.s("labels.json"),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["seed"], 3);
    assert_eq!(json(&out)["replaced"], 8);

    let out = ws.run(&[
        "trace", "--provider", &provider, "--text", ws.s("attacked.txt"), "--prompt", ws.s("prompt.txt"),
        "--labels", ws.s("labels.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&out);
    let labels: Vec<u8> = serde_json::from_str(&fs::read_to_string(ws.p("labels.json")).unwrap()).unwrap();
    let flagged = report["records"]
        .as_array()
        .unwrap()
        .iter()
        .zip(&labels)
        .filter(|(r, &l)| l == 1 && r["tp"].as_f64().unwrap() >= 0.75)
        .count();
    assert!(flagged >= 6, "{flagged} of 8 substitutions flagged");
    assert!(report["fineness"].as_f64().unwrap() > 0.0);

    fs::write(ws.p("short.json"), "[1, 0]").unwrap();
    let out = ws.run(&[
        "trace", "--provider", &provider, "--text", ws.s("attacked.txt"), "--labels", ws.s("short.json"),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_writes_one_row_per_cell() {
    let ws = Workspace::new();
    fs::write(
        ws.p("grid.json"),
        r#"{"lambda": [0.5, 1.0], "epsilon": [8, 16], "eta": [1.0], "config": {"trials": 3, "message_bits": [8, 16]}}"#,
    )
    .unwrap();
    let provider = ws.provider();
    let out = ws.run(&[
        "eval", "--provider", &provider, "--grid", ws.s("grid.json"), "--seed", "1", "--out-csv", ws.s("r.csv"),
        "--out-json", ws.s("r.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(ws.p("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().next().unwrap().contains("mean_WL"));
    let report: Value = serde_json::from_str(&fs::read_to_string(ws.p("r.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);
    assert!(report["rows"].as_array().unwrap().iter().all(|r| r["success_pct"] == 100.0));
}

#[test]
fn train_provider_rejects_tiny_corpus() {
    let ws = Workspace::new();
    fs::write(ws.p("tiny.txt"), "one two three").unwrap();
    let out = ws.run(&["train-provider", "--corpus", ws.s("tiny.txt"), "--order", "3", "--out", ws.s("tiny.json")]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("corpus"));
}

#[test]
fn provider_comes_from_environment() {
    let ws = Workspace::new();
    let out = Command::new(env!("CARGO_BIN_EXE_segmark"))
        .args(["trace", "--text", ws.s("prompt.txt")])
        .env("SEGMARK_PROVIDER", ws.provider())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = ws.run(&["trace", "--provider", "ngram:/nonexistent/model.json", "--text", ws.s("prompt.txt")]);
    assert_eq!(code(&out), 5);
    let out = ws.run(&["trace", "--text", ws.s("prompt.txt")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_input_file_is_io_error() {
    let ws = Workspace::new();
    let out = ws.extract("nope.txt", "owner.key");
    assert!(!Path::new(ws.s("wm.cipher")).exists());
    assert_eq!(code(&out), 3);
}
