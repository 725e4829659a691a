//! Command-line front end. [`run`] returns the process exit code:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage error, unsupported algorithm, corpus too small, label mismatch |
//! | 3 | I/O failure, or output exists without `--force` |
//! | 4 | watermark incomplete |
//! | 5 | provider failure or provider mismatch |
//! | 6 | verification failed (wrong key, damaged envelope) |
//! | 7 | token not in candidates (text was altered) |
//! | 8 | text ended before the whole message was recovered |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::RngCore;
use serde_json::json;

use crate::bitstream::{bits_to_literal, decode_bits, MessageBits};
use crate::codec::{self, CodecError, EmbedParams, WatermarkParams, DEFAULT_EPSILON, DEFAULT_LAMBDA, DEFAULT_TOP_K};
use crate::metrics::{self, SweepConfig, SweepGrid};
use crate::partial::{self, PartialParams, DEFAULT_SENTENCE_TOKEN_CAP};
use crate::permission::{
    self, keygen, CipherEnvelope, CipherPayload, MessageEncoding, PermissionError, PrivateKey, PublicKey,
};
use crate::providers::{load_provider, NgramModel, Provider, ProviderError};
use crate::tamper::{self, TamperError};

/// Environment variable naming the provider used when `--provider` is absent.
pub const PROVIDER_ENV: &str = "SEGMARK_PROVIDER";

/// Corpus bundled with the crate, used by `eval` when no corpus is given.
pub const BUNDLED_CORPUS: &str = include_str!("../data/traffic_corpus.txt");

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const INCOMPLETE: i32 = 4;
    pub const PROVIDER: i32 = 5;
    pub const VERIFICATION: i32 = 6;
    pub const NOT_CANDIDATE: i32 = 7;
    pub const SHORT: i32 = 8;
}

#[derive(Debug, Parser)]
#[command(name = "segmark", version, about = "Multi-bit text watermarking over next-token distributions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a key pair for sealing extraction parameters.
    Keygen(KeygenArgs),
    /// Generate watermarked text and seal its extraction parameters.
    Embed(EmbedArgs),
    /// Open the envelope and recover the message from the text.
    Extract(ExtractArgs),
    /// Score every word of a text for tampering.
    Trace(TraceArgs),
    /// Replace a share of words at random.
    Attack(AttackArgs),
    /// Run a parameter sweep and write CSV/JSON reports.
    Eval(EvalArgs),
    /// Train an n-gram provider from a text corpus.
    TrainProvider(TrainArgs),
}

#[derive(Debug, Args)]
pub struct ProviderArg {
    /// `ngram:PATH`, `static:PATH`, `remote:URL,VOCAB_PATH` or a model path.
    #[arg(long, env = PROVIDER_ENV)]
    pub provider: String,
}

#[derive(Debug, Args)]
pub struct KeygenArgs {
    #[arg(long, default_value = "x25519")]
    pub algo: String,
    #[arg(long)]
    pub out_pub: PathBuf,
    #[arg(long)]
    pub out_priv: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub provider: ProviderArg,
    /// File holding the prompt text.
    #[arg(long)]
    pub prompt: PathBuf,
    /// Message text, or raw bits as `bits:0101...`.
    #[arg(long)]
    pub message: String,
    #[arg(long)]
    pub pubkey: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: u32,
    /// Share of sentences to regenerate; 1 embeds into fresh text.
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: usize,
    /// Document to partially re-embed (eta < 1). Without it an argmax
    /// continuation of the prompt is used.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Sentences in the generated base document.
    #[arg(long, default_value_t = 8)]
    pub base_sentences: usize,
    #[arg(long, default_value_t = DEFAULT_SENTENCE_TOKEN_CAP)]
    pub sentence_cap: usize,
    #[arg(long)]
    pub out_text: PathBuf,
    #[arg(long)]
    pub out_cipher: PathBuf,
    /// Per-step JSON-lines trace.
    #[arg(long)]
    pub out_trace: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub provider: ProviderArg,
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub cipher: PathBuf,
    #[arg(long)]
    pub privkey: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub provider: ProviderArg,
    #[arg(long)]
    pub text: PathBuf,
    /// Prompt the text continues, if known.
    #[arg(long)]
    pub prompt: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Ground truth as a JSON array of 0/1 (as written by `attack`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub provider: ProviderArg,
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub rate: f64,
    /// Random if omitted; always printed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_text: PathBuf,
    #[arg(long)]
    pub out_labels: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub provider: ProviderArg,
    /// JSON object with `lambda`, `epsilon`, `eta` lists and optional
    /// `config` overrides. Defaults to the lambda ablation grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// One document per line; defaults to the bundled corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// An error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
    /// Extra machine-readable detail printed to stdout.
    pub detail: Option<serde_json::Value>,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            detail: None,
        }
    }
}

impl From<ProviderError> for Failure {
    fn from(e: ProviderError) -> Self {
        let code = match e {
            ProviderError::CorpusTooSmall { .. } => exit::USAGE,
            ProviderError::Io(_) => exit::IO,
            _ => exit::PROVIDER,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::WatermarkIncomplete { consumed, remaining, .. } => Failure {
                code: exit::INCOMPLETE,
                message: e.to_string(),
                detail: Some(json!({"error": "watermark_incomplete", "consumed": consumed, "remaining": remaining})),
            },
            CodecError::TokenNotInCandidates { position, sentence, .. } => Failure {
                code: exit::NOT_CANDIDATE,
                message: e.to_string(),
                detail: Some(json!({"error": "token_not_in_candidates", "position": position, "sentence": sentence})),
            },
            CodecError::ExtractionShort { recovered, expected } => Failure {
                code: exit::SHORT,
                message: e.to_string(),
                detail: Some(json!({"error": "extraction_short", "recovered": recovered, "expected": expected})),
            },
            CodecError::Provider(p) => p.into(),
            other => Failure::new(exit::USAGE, other.to_string()),
        }
    }
}

impl From<PermissionError> for Failure {
    fn from(e: PermissionError) -> Self {
        match e {
            PermissionError::UnsupportedAlgorithm(_) | PermissionError::InvalidPayload(_) => {
                Failure::new(exit::USAGE, e.to_string())
            }
            PermissionError::VerificationFailed
            | PermissionError::IntegrityError
            | PermissionError::FormatError(_)
            | PermissionError::KeyFormat(_) => Failure::new(exit::VERIFICATION, e.to_string()),
            PermissionError::FingerprintMismatch { .. } => Failure::new(exit::PROVIDER, e.to_string()),
            PermissionError::Serialization(_) => Failure::new(exit::IO, e.to_string()),
            PermissionError::Codec(c) => c.into(),
            PermissionError::Provider(p) => p.into(),
        }
    }
}

impl From<TamperError> for Failure {
    fn from(e: TamperError) -> Self {
        match e {
            TamperError::Provider(p) => p.into(),
            other => Failure::new(exit::USAGE, other.to_string()),
        }
    }
}

type CmdResult = Result<serde_json::Value, Failure>;

/// Parses `args` (including the program name) and runs the command,
/// writing JSON to `out` and diagnostics to standard error.
pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Keygen(a) => cmd_keygen(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Eval(a) => cmd_eval(a),
        Command::TrainProvider(a) => cmd_train(a),
    };
    match result {
        Ok(value) => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("json value"));
            exit::OK
        }
        Err(f) => {
            if let Some(detail) = f.detail {
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&detail).expect("json value"));
            }
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Entry point for the binary.
pub fn run() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout())
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(exit::IO, format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, contents: &[u8], force: bool) -> Result<(), Failure> {
    if !force && path.exists() {
        return Err(Failure::new(
            exit::IO,
            format!("{} exists; pass --force to overwrite", path.display()),
        ));
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn provider(arg: &ProviderArg) -> Result<Box<dyn Provider>, Failure> {
    load_provider(&arg.provider).map_err(|e| match e {
        ProviderError::Io(_) | ProviderError::InvalidModel(_) => Failure::new(exit::PROVIDER, e.to_string()),
        other => other.into(),
    })
}

fn parse_message(raw: &str) -> Result<(MessageBits, MessageEncoding), Failure> {
    let usage = |e: crate::bitstream::BitstreamError| Failure::new(exit::USAGE, e.to_string());
    match raw.strip_prefix("bits:") {
        Some(bits) => Ok((MessageBits::from_literal(bits).map_err(usage)?, MessageEncoding::Bits)),
        None => Ok((MessageBits::encode_text(raw).map_err(usage)?, MessageEncoding::Utf8)),
    }
}

fn cmd_keygen(a: KeygenArgs) -> CmdResult {
    let pair = keygen(&a.algo)?;
    write_file(&a.out_pub, pair.public.to_pem().as_bytes(), a.force)?;
    write_file(&a.out_priv, pair.private.to_pem().as_bytes(), a.force)?;
    restrict_permissions(&a.out_priv);
    Ok(json!({
        "algorithm": pair.algorithm.name(),
        "public_key": a.out_pub,
        "private_key": a.out_priv,
    }))
}

#[cfg(unix)]
fn restrict_permissions(path: &Path) {
    use std::os::unix::fs::PermissionsExt;
    let _ = fs::set_permissions(path, fs::Permissions::from_mode(0o600));
}

#[cfg(not(unix))]
fn restrict_permissions(_: &Path) {}

fn cmd_embed(a: EmbedArgs) -> CmdResult {
    let (message, encoding) = parse_message(&a.message)?;
    let public = PublicKey::from_pem(&read_text(&a.pubkey)?)?;
    let provider = provider(&a.provider)?;
    let prompt_text = read_text(&a.prompt)?.trim().to_string();
    let prompt = provider.tokenize(&prompt_text)?;
    let params = WatermarkParams::new(a.lambda, a.epsilon, a.top_k);
    let base_payload = CipherPayload::full(&prompt_text, params, message.len(), provider.fingerprint(), encoding);

    let (text, payload, wl, tokens, trace, sentences) = if a.eta >= 1.0 {
        let e = codec::embed(&provider, &prompt, &message, &EmbedParams::new(params, a.max_tokens))?;
        let wl = e.embedded_bits();
        let tokens = e.watermark_tokens();
        (e.text.rendered_text.clone(), base_payload, wl, tokens, e.trace_jsonl(), None)
    } else {
        let base = match &a.base {
            Some(path) => read_text(path)?,
            None => partial::generate_base(&provider, &prompt, a.base_sentences, a.max_tokens)?,
        };
        let mut pp = PartialParams::new(params, a.eta);
        pp.sentence_token_cap = a.sentence_cap;
        let e = partial::embed_partial(&provider, &prompt, &base, &message, &pp)?;
        let payload = e.payload(base_payload, &pp);
        let trace: String = e
            .trace
            .iter()
            .map(|s| serde_json::to_string(s).expect("trace record") + "\n")
            .collect();
        let wl = e.embedded_bits();
        let tokens = e.text.token_ids.len();
        (e.text.rendered_text, payload, wl, tokens, trace, Some(e.sentence_indices))
    };

    let envelope = permission::seal(&payload, &public)?;
    write_file(&a.out_text, text.as_bytes(), a.force)?;
    write_file(&a.out_cipher, &envelope.to_bytes(), a.force)?;
    if let Some(path) = &a.out_trace {
        write_file(path, trace.as_bytes(), a.force)?;
    }
    Ok(json!({
        "mode": payload.mode,
        "watermark_length": wl,
        "tokens": tokens,
        "payload": metrics::payload(wl, tokens),
        "message_bits": message.len(),
        "sentence_indices": sentences,
        "out_text": a.out_text,
        "out_cipher": a.out_cipher,
    }))
}

fn cmd_extract(a: ExtractArgs) -> CmdResult {
    let private = PrivateKey::from_pem(&read_text(&a.privkey)?)?;
    let bytes = fs::read(&a.cipher).map_err(|e| io_err(&a.cipher, e))?;
    let envelope = CipherEnvelope::from_bytes(&bytes)?;
    let text = read_text(&a.text)?;
    // Open before touching the provider so a wrong key fails fast.
    permission::open(&envelope, &private)?;
    let provider = provider(&a.provider)?;
    let (payload, bits) = permission::verify_and_extract_text(&text, &envelope, &private, &provider)?;
    let decoded = decode_bits(bits.bits());
    let (message, residue) = match payload.encoding {
        MessageEncoding::Utf8 => (json!(decoded.text), json!(decoded.residue)),
        MessageEncoding::Bits => (serde_json::Value::Null, serde_json::Value::Null),
    };
    Ok(json!({
        "message": message,
        "residue": residue,
        "bits": bits_to_literal(bits.bits()),
        "length": bits.len(),
        "mode": payload.mode,
    }))
}

fn parse_labels(raw: &str) -> Result<Vec<bool>, Failure> {
    let values: Vec<serde_json::Value> = serde_json::from_str(raw)
        .map_err(|e| Failure::new(exit::USAGE, format!("labels must be a JSON array: {e}")))?;
    values
        .iter()
        .map(|v| match v {
            serde_json::Value::Bool(b) => Ok(*b),
            serde_json::Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
            serde_json::Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
            other => Err(Failure::new(exit::USAGE, format!("label {other} is not 0/1"))),
        })
        .collect()
}

fn cmd_trace(a: TraceArgs) -> CmdResult {
    let text = read_text(&a.text)?;
    let labels = a.labels.as_deref().map(read_text).transpose()?;
    let provider = provider(&a.provider)?;
    let prompt = match &a.prompt {
        Some(path) => provider.tokenize(read_text(path)?.trim())?,
        None => Vec::new(),
    };
    let mut report = tamper::trace(&provider, &text, &prompt, a.top_k)?;
    if let Some(raw) = labels {
        report = report.with_labels(&parse_labels(&raw)?)?;
    }
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

fn cmd_attack(a: AttackArgs) -> CmdResult {
    let text = read_text(&a.text)?;
    let provider = provider(&a.provider)?;
    let seed = a.seed.unwrap_or_else(|| rand::rngs::OsRng.next_u64());
    let result = tamper::substitute_attack(&text, a.rate, seed, &provider)?;
    let labels: Vec<u8> = result.labels.iter().map(|&l| l as u8).collect();
    write_file(&a.out_text, result.text.as_bytes(), a.force)?;
    write_file(
        &a.out_labels,
        serde_json::to_string(&labels).expect("labels").as_bytes(),
        a.force,
    )?;
    Ok(json!({
        "seed": seed,
        "rate": a.rate,
        "replaced": labels.iter().filter(|&&l| l == 1).count(),
        "positions": labels.len(),
        "out_text": a.out_text,
        "out_labels": a.out_labels,
    }))
}

#[derive(Debug, serde::Deserialize)]
struct GridFile {
    #[serde(flatten)]
    grid: SweepGrid,
    #[serde(default)]
    config: Option<SweepConfig>,
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let (grid, mut config) = match &a.grid {
        Some(path) => {
            let file: GridFile = serde_json::from_str(&read_text(path)?)
                .map_err(|e| Failure::new(exit::USAGE, format!("grid: {e}")))?;
            (file.grid, file.config.unwrap_or_default())
        }
        None => (SweepGrid::default(), SweepConfig::default()),
    };
    if let Some(t) = a.trials {
        config.trials = t;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let corpus_text = match &a.corpus {
        Some(path) => read_text(path)?,
        None => BUNDLED_CORPUS.to_string(),
    };
    let docs: Vec<&str> = corpus_text.lines().filter(|l| !l.trim().is_empty()).collect();
    let provider = provider(&a.provider)?;
    let report = metrics::sweep(&grid, &docs, &provider, &config)
        .map_err(|e| Failure::new(exit::USAGE, e.to_string()))?;
    let csv = report
        .to_csv()
        .map_err(|e| Failure::new(exit::IO, e.to_string()))?;
    if let Some(path) = &a.out_csv {
        write_file(path, csv.as_bytes(), a.force)?;
    }
    if let Some(path) = &a.out_json {
        write_file(path, report.to_json().as_bytes(), a.force)?;
    }
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let corpus = read_text(&a.corpus)?;
    let model = NgramModel::train(&corpus, a.order, a.alpha)?;
    write_file(&a.out, model.to_json().as_bytes(), a.force)?;
    let fp = model.fingerprint();
    Ok(json!({
        "order": a.order,
        "alpha": a.alpha,
        "vocab_size": fp.vocab_size,
        "fingerprint": fp.to_string(),
        "out": a.out,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn message_forms() {
        let (m, enc) = parse_message("bits:0101").unwrap();
        assert_eq!(m.to_literal(), "0101");
        assert_eq!(enc, MessageEncoding::Bits);
        let (m, enc) = parse_message("A").unwrap();
        assert_eq!(m.to_literal(), "01000001");
        assert_eq!(enc, MessageEncoding::Utf8);
        assert_eq!(parse_message("bits:01x").unwrap_err().code, exit::USAGE);
    }

    #[test]
    fn labels_forms() {
        assert_eq!(parse_labels("[0,1,true]").unwrap(), vec![false, true, true]);
        assert!(parse_labels("[2]").is_err());
    }
}
