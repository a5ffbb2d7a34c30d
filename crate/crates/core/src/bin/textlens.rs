//! Command-line surface for the textlens toolkit.
//!
//! Exit codes are a stable contract:
//!   0  success
//!   2  usage or configuration error (bad flags, invalid merged config)
//!   3  adapter failure (plugin missing, load or ABI error)
//!   4  data failure (unreadable inputs, malformed manifests, shape errors)

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use textlens::adapters::{default_search_paths, load_provider, TraceProvider, TOY_PROVIDER};
use textlens::analysis;
use textlens::error::Error;
use textlens::evalbench::{self, RunOptions};
use textlens::glc::{self, CorrectionConfig, LayerPolicy, Strategy};
use textlens::tokenizer::ByteTokenizer;
use textlens::toy::ToyParams;
use textlens::trace::{boxes_to_tokens, read_trace, write_trace, QuadBox};
use textlens::zoomtext;

const EXIT_USAGE: u8 = 2;
const EXIT_ADAPTER: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser)]
#[command(
    name = "textlens",
    version,
    about = "Diagnose and mitigate semantic hallucination in multimodal decoding over scene text",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a provider over a prompt and record the forward pass as a trace archive.
    Trace(TraceCmd),
    /// Diagnose a recorded trace: per-layer tendency/grounding profiles, their
    /// rank correlation, and per-token attention variability.
    Analyze(AnalyzeCmd),
    /// Decode with grounded-layer correction and report what was corrected.
    Mitigate(MitigateCmd),
    /// Score a benchmark manifest with corrected decoding.
    Eval(EvalCmd),
    /// Re-run the benchmark across fusion weights or grounded-layer ranges.
    Sweep(SweepCmd),
    /// Print the JSON schema for benchmark manifest lines.
    Schema,
}

#[derive(Args)]
struct AdapterArgs {
    /// Trace provider: "toy" or a plugin library name/path.
    #[arg(long, default_value = TOY_PROVIDER)]
    adapter: String,
    /// JSON construction parameters handed to the provider.
    #[arg(long, default_value = "{}")]
    adapter_params: String,
    /// Extra plugin search directories, tried before $TEXTLENS_ADAPTER_PATH.
    #[arg(long = "adapter-path", value_name = "DIR")]
    adapter_path: Vec<PathBuf>,
}

impl AdapterArgs {
    fn search_paths(&self) -> Vec<PathBuf> {
        self.adapter_path.iter().cloned().chain(default_search_paths()).collect()
    }

    fn open(&self) -> Result<Box<dyn TraceProvider>, Error> {
        load_provider(&self.adapter, &self.adapter_params, &self.search_paths())
    }
}

#[derive(Args)]
struct CorrectionArgs {
    /// JSON file holding a correction config; explicit flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Image tokens the glimpse keeps (top-K).
    #[arg(long, value_name = "N")]
    k: Option<usize>,
    /// Fusion weight: the grounded layer's share of the blend.
    #[arg(long, value_name = "W")]
    w: Option<f64>,
    /// Stabilizer added to the refocus denominator.
    #[arg(long, value_name = "EPS")]
    epsilon: Option<f64>,
    /// Fraction of glimpse candidates refocus keeps.
    #[arg(long, value_name = "F")]
    keep_fraction: Option<f64>,
    /// off | replacement | fusion | selective_replacement
    #[arg(long, value_name = "NAME")]
    strategy: Option<String>,
    /// grounded | fixed:N | random:LO:HI:SEED
    #[arg(long, value_name = "POLICY")]
    layer_policy: Option<String>,
}

impl CorrectionArgs {
    /// File config (or defaults) with flag overrides, validated before any work.
    fn merge(&self) -> Result<CorrectionConfig, CliError> {
        let mut config = match &self.config {
            None => CorrectionConfig::default(),
            Some(path) => {
                let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&raw).map_err(|e| {
                    CliError::Usage(format!("config file {}: {e}", path.display()))
                })?
            }
        };
        if let Some(k) = self.k {
            config.top_k = k;
        }
        if let Some(w) = self.w {
            config.fusion_weight = w;
        }
        if let Some(eps) = self.epsilon {
            config.epsilon = eps;
        }
        if let Some(f) = self.keep_fraction {
            config.keep_fraction = f;
        }
        if let Some(s) = &self.strategy {
            config.strategy = parse_strategy(s)?;
        }
        if let Some(p) = &self.layer_policy {
            config.layer_policy = parse_layer_policy(p)?;
        }
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, CliError> {
    match s {
        "off" => Ok(Strategy::Off),
        "replacement" => Ok(Strategy::Replacement),
        "fusion" => Ok(Strategy::Fusion),
        "selective_replacement" => Ok(Strategy::SelectiveReplacement),
        other => Err(CliError::Usage(format!(
            "unknown strategy {other:?}; expected off, replacement, fusion, or selective_replacement"
        ))),
    }
}

fn parse_layer_policy(s: &str) -> Result<LayerPolicy, CliError> {
    if s == "grounded" {
        return Ok(LayerPolicy::GroundedArgmax);
    }
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["fixed", n] => n
            .parse()
            .map(LayerPolicy::Fixed)
            .map_err(|_| CliError::Usage(format!("fixed layer policy needs a number, got {n:?}"))),
        ["random", lo, hi, seed] => {
            let parse =
                |v: &str, what| -> Result<u64, CliError> {
                    v.parse().map_err(|_| {
                        CliError::Usage(format!("random layer policy: bad {what} {v:?}"))
                    })
                };
            Ok(LayerPolicy::RandomInRange {
                lo: parse(lo, "lower bound")? as usize,
                hi: parse(hi, "upper bound")? as usize,
                seed: parse(seed, "seed")?,
            })
        }
        _ => Err(CliError::Usage(format!(
            "unknown layer policy {s:?}; expected grounded, fixed:N, or random:LO:HI:SEED"
        ))),
    }
}

#[derive(Args)]
struct PromptArgs {
    /// Prompt text, byte-tokenized (needs provider vocab >= 256).
    #[arg(long, conflicts_with = "prompt_tokens")]
    prompt: Option<String>,
    /// Comma-separated token ids, bypassing the tokenizer.
    #[arg(long, value_name = "IDS")]
    prompt_tokens: Option<String>,
}

impl PromptArgs {
    fn resolve(&self, vocab: usize) -> Result<Vec<u32>, CliError> {
        if let Some(raw) = &self.prompt_tokens {
            return parse_u32_list(raw, "--prompt-tokens");
        }
        let text = self.prompt.as_deref().unwrap_or("read the sign");
        let tok = ByteTokenizer::new(vocab)?;
        Ok(tok.encode(text))
    }
}

fn parse_u32_list(raw: &str, flag: &str) -> Result<Vec<u32>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| CliError::Usage(format!("{flag}: {p:?} is not a token id")))
        })
        .collect()
}

#[derive(Args)]
struct TraceCmd {
    /// Directory to write outputs under.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Archive name inside --out.
    #[arg(long, default_value = "trace")]
    name: String,
    #[command(flatten)]
    adapter: AdapterArgs,
    #[command(flatten)]
    prompt: PromptArgs,
    /// Toy model only: RNG seed for weight initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Toy model only: transformer layer count.
    #[arg(long)]
    layers: Option<usize>,
    /// Toy model only: attention heads per layer.
    #[arg(long)]
    heads: Option<usize>,
    /// Toy model only: hidden width.
    #[arg(long)]
    d_model: Option<usize>,
    /// Toy model only: vocabulary size.
    #[arg(long)]
    vocab: Option<usize>,
    /// Toy model only: image tokens prefixed to the sequence.
    #[arg(long)]
    image_tokens: Option<usize>,
}

#[derive(Args)]
struct AnalyzeCmd {
    /// Trace archive directory (from `textlens trace`). The recorded sequence
    /// must end with the generated tokens (teacher-forced).
    #[arg(long, value_name = "DIR")]
    trace: PathBuf,
    /// JSON array of generated token ids.
    #[arg(long, value_name = "FILE")]
    generated: PathBuf,
    /// JSON array of ground-truth token ids.
    #[arg(long, value_name = "FILE")]
    expected: PathBuf,
    /// Directory to write outputs under.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// JSON file of text-region boxes ([[x,y] x4] per box, image pixels).
    /// Without it, text regions come from glimpse + refocus on the trace.
    #[arg(long, value_name = "FILE")]
    boxes: Option<PathBuf>,
    /// Also render the glimpse heatmap PNG.
    #[arg(long)]
    heatmap: bool,
    /// Pixels per token cell in the heatmap.
    #[arg(long, default_value_t = 24)]
    cell_px: u32,
    /// Glimpse candidate count.
    #[arg(long, default_value_t = zoomtext::DEFAULT_TOP_K)]
    k: usize,
    /// Refocus shift stabilizer.
    #[arg(long, default_value_t = zoomtext::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Fraction of glimpse candidates refocus keeps.
    #[arg(long, default_value_t = zoomtext::DEFAULT_KEEP_FRACTION)]
    keep_fraction: f64,
}

#[derive(Args)]
struct MitigateCmd {
    /// Directory to write outputs under.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    adapter: AdapterArgs,
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    correction: CorrectionArgs,
    /// Maximum tokens to generate.
    #[arg(long, default_value_t = 24)]
    max_new: usize,
}

#[derive(Args)]
struct EvalCmd {
    /// Benchmark manifest (JSONL; see `textlens schema`).
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Directory to write outputs under.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    adapter: AdapterArgs,
    #[command(flatten)]
    correction: CorrectionArgs,
    /// Maximum tokens to generate per sample.
    #[arg(long, default_value_t = 24)]
    max_new: usize,
    /// Parallel evaluation workers (providers must be parallel-safe).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SweepCmd {
    /// Benchmark manifest (JSONL; see `textlens schema`).
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Directory to write outputs under.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Comma-separated fusion weights, e.g. "0,0.1,0.5".
    #[arg(long, value_name = "LIST", required_unless_present = "layer_ranges", conflicts_with = "layer_ranges")]
    weights: Option<String>,
    /// Comma-separated grounded-layer ranges, e.g. "0:10,10:20,20:35".
    #[arg(long, value_name = "LIST")]
    layer_ranges: Option<String>,
    /// Seed for per-range random layer picks.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[command(flatten)]
    adapter: AdapterArgs,
    #[command(flatten)]
    correction: CorrectionArgs,
    /// Maximum tokens to generate per sample.
    #[arg(long, default_value_t = 24)]
    max_new: usize,
    /// Parallel evaluation workers.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

/// Print a status line, exiting quietly when the reader has closed the pipe
/// (e.g. `textlens schema | head`), per the usual Unix convention.
fn emit(line: std::fmt::Arguments<'_>) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_fmt(line).and_then(|()| out.write_all(b"\n")) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => {
            eprintln!("error: writing to stdout: {e}");
            std::process::exit(i32::from(EXIT_DATA));
        }
    }
}

macro_rules! emit {
    ($($arg:tt)*) => { emit(format_args!($($arg)*)) };
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Trace(cmd) => cmd_trace(cmd),
        Command::Analyze(cmd) => cmd_analyze(cmd),
        Command::Mitigate(cmd) => cmd_mitigate(cmd),
        Command::Eval(cmd) => cmd_eval(cmd),
        Command::Sweep(cmd) => cmd_sweep(cmd),
        Command::Schema => {
            emit!("{}", evalbench::MANIFEST_SCHEMA.trim_end());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Adapter(_) => ExitCode::from(EXIT_ADAPTER),
                _ => ExitCode::from(EXIT_DATA),
            }
        }
    }
}

fn ensure_out(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_out(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let pretty = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serializing {}: {e}", path.display())))?;
    write_out(path, &(pretty + "\n"))
}

fn cmd_trace(cmd: TraceCmd) -> Result<(), CliError> {
    let toy_flags_set = cmd.seed.is_some()
        || cmd.layers.is_some()
        || cmd.heads.is_some()
        || cmd.d_model.is_some()
        || cmd.vocab.is_some()
        || cmd.image_tokens.is_some();
    let mut provider = if cmd.adapter.adapter == TOY_PROVIDER {
        let mut params = ToyParams::from_json(&cmd.adapter.adapter_params)?;
        if let Some(v) = cmd.seed {
            params.seed = v;
        }
        if let Some(v) = cmd.layers {
            params.layers = v;
        }
        if let Some(v) = cmd.heads {
            params.heads = v;
        }
        if let Some(v) = cmd.d_model {
            params.d_model = v;
        }
        if let Some(v) = cmd.vocab {
            params.vocab = v;
        }
        if let Some(v) = cmd.image_tokens {
            params.n_image_tokens = v;
        }
        let json = serde_json::to_string(&params)
            .map_err(|e| Error::Data(format!("serializing toy params: {e}")))?;
        load_provider(TOY_PROVIDER, &json, &[])?
    } else {
        if toy_flags_set {
            return Err(CliError::Usage(
                "--seed/--layers/--heads/--d-model/--vocab/--image-tokens only apply to the toy \
                 adapter; configure plugins via --adapter-params"
                    .into(),
            ));
        }
        cmd.adapter.open()?
    };

    let vocab = provider.metadata().vocab;
    let tokens = cmd.prompt.resolve(vocab)?;
    let trace = provider.prefill(&tokens)?;
    ensure_out(&cmd.out)?;
    let archive = cmd.out.join(&cmd.name);
    write_trace(&trace, &archive)?;
    emit!(
        "wrote trace archive {} (model {}, layers {}, seq {}, width {}, digest {})",
        archive.display(),
        trace.model_id(),
        trace.n_layers(),
        trace.seq_len(),
        trace.d_model(),
        &trace.digest_hex()[..16],
    );
    Ok(())
}

fn read_token_file(path: &Path) -> Result<Vec<u32>, CliError> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tokens: Vec<u32> = serde_json::from_str(&raw).map_err(|e| {
        CliError::Run(Error::Data(format!(
            "{}: expected a JSON array of token ids: {e}",
            path.display()
        )))
    })?;
    Ok(tokens)
}

fn read_boxes_file(path: &Path) -> Result<Vec<QuadBox>, CliError> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let boxes: Vec<QuadBox> = serde_json::from_str(&raw).map_err(|e| {
        CliError::Run(Error::Data(format!(
            "{}: expected a JSON array of 4-point boxes: {e}",
            path.display()
        )))
    })?;
    Ok(boxes)
}

fn cmd_analyze(cmd: AnalyzeCmd) -> Result<(), CliError> {
    let trace = read_trace(&cmd.trace)?;
    let generated = read_token_file(&cmd.generated)?;
    let expected = read_token_file(&cmd.expected)?;
    ensure_out(&cmd.out)?;

    // Text-region selection: explicit boxes win; otherwise glimpse + refocus.
    let (map, candidates) = zoomtext::glimpse(&trace, cmd.k)?;
    let selection = match &cmd.boxes {
        Some(path) => {
            let boxes = read_boxes_file(path)?;
            boxes_to_tokens(&boxes, trace.layout())?
        }
        None => zoomtext::refocus(&trace, &candidates, cmd.epsilon, cmd.keep_fraction)?,
    };
    let shift = zoomtext::shift_scores(&trace, &candidates, cmd.epsilon)?;
    let per_token = shift.per_token_scores();
    write_out(
        &cmd.out.join("zoomtext.csv"),
        &zoomtext::zoomtext_csv(&map, trace.layout(), Some((&shift, &per_token)), &selection),
    )?;
    if cmd.heatmap {
        zoomtext::render_heatmap(
            &map,
            trace.layout(),
            Some(&selection),
            cmd.cell_px,
            &cmd.out.join("heatmap.png"),
        )?;
    }

    // Attention variability over layers, one row per image token.
    let mut cv_csv = String::from("token_index,cv\n");
    for t in trace.layout().image_token_range.clone() {
        cv_csv.push_str(&format!("{},{}\n", t, analysis::attention_cv(&trace, t)?));
    }
    write_out(&cmd.out.join("cv.csv"), &cv_csv)?;

    let locus = analysis::extract_hallucinated_token(&generated, &expected)?;
    let Some(locus) = locus else {
        write_json(
            &cmd.out.join("summary.json"),
            &serde_json::json!({
                "locus": null,
                "note": "no hallucination locus: generated and expected tokens agree",
            }),
        )?;
        emit!("no hallucination locus: generated and expected tokens agree");
        return Ok(());
    };

    let profiles = analysis::layer_profiles(&trace, &locus, generated.len(), &selection)?;
    write_out(&cmd.out.join("profiles.csv"), &analysis::profiles_csv(&profiles))?;
    let report = analysis::correlation_report(&[("trace".to_string(), profiles.clone())])?;
    write_json(&cmd.out.join("correlation.json"), &report)?;
    write_json(
        &cmd.out.join("summary.json"),
        &serde_json::json!({
            "locus": locus,
            "aggregate_rho": report.aggregate_rho,
            "n_layers": trace.n_layers(),
            "selection_len": selection.len(),
        }),
    )?;
    let rho = report.per_sample[0]
        .rho
        .map(|r| format!("{r:.4}"))
        .unwrap_or_else(|| "undefined".into());
    emit!(
        "locus at generated position {} (token {} vs expected {}); tendency/grounding rho {}",
        locus.position, locus.hallucinated_token_id, locus.ground_truth_token_id, rho
    );
    Ok(())
}

fn cmd_mitigate(cmd: MitigateCmd) -> Result<(), CliError> {
    let config = cmd.correction.merge()?;
    let mut provider = cmd.adapter.open()?;
    let vocab = provider.metadata().vocab;
    let tokens = cmd.prompt.resolve(vocab)?;
    let (answer, outcome) =
        glc::decode_with_correction(provider.as_mut(), &tokens, &config, cmd.max_new)?;
    let text = if vocab >= 256 {
        Some(ByteTokenizer::new(vocab)?.decode(&answer))
    } else {
        None
    };

    ensure_out(&cmd.out)?;
    write_json(
        &cmd.out.join("answer.json"),
        &serde_json::json!({ "tokens": answer, "text": text }),
    )?;
    write_json(&cmd.out.join("outcome.json"), &outcome)?;

    emit!("grounded layer: {}", outcome.selected_layer);
    emit!("strategy: {}", outcome.strategy_used);
    emit!("selected tokens: {:?}", outcome.selected_tokens);
    emit!("corrected positions: {}", outcome.corrected_positions.len());
    match &text {
        Some(t) => emit!("answer: {t:?}"),
        None => emit!("answer tokens: {answer:?}"),
    }
    Ok(())
}

fn cmd_eval(cmd: EvalCmd) -> Result<(), CliError> {
    let config = cmd.correction.merge()?;
    let samples = evalbench::load_manifest(&cmd.manifest)?;
    if samples.is_empty() {
        return Err(CliError::Run(Error::Data(format!(
            "manifest {} holds no samples",
            cmd.manifest.display()
        ))));
    }
    let opts = RunOptions { max_new_tokens: cmd.max_new, jobs: cmd.jobs };
    let factory = || cmd.adapter.open();
    let report = evalbench::run_benchmark(&factory, &samples, &config, &opts)?;

    ensure_out(&cmd.out)?;
    write_json(&cmd.out.join("report.json"), &report)?;
    write_out(&cmd.out.join("report.csv"), &report.to_csv())?;

    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    emit!("samples scored: {} (errored {})", report.n_samples, report.n_errored);
    emit!("spotting F1 (micro): {}", fmt(report.per_task.spotting_f1));
    emit!("spotting F1 (macro): {}", fmt(report.spotting_f1_macro));
    emit!("understanding accuracy: {}", fmt(report.per_task.understanding_f1));
    emit!("average score: {:.4}", report.average_f1);
    Ok(())
}

fn report_csv_fields(report: &evalbench::EvalReport) -> String {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{}",
        fmt(report.spotting_f1_micro),
        fmt(report.spotting_f1_macro),
        fmt(report.per_task.understanding_f1),
        report.average_f1,
        report.n_samples,
        report.n_errored
    )
}

fn cmd_sweep(cmd: SweepCmd) -> Result<(), CliError> {
    let config = cmd.correction.merge()?;
    let samples = evalbench::load_manifest(&cmd.manifest)?;
    if samples.is_empty() {
        return Err(CliError::Run(Error::Data(format!(
            "manifest {} holds no samples",
            cmd.manifest.display()
        ))));
    }
    let opts = RunOptions { max_new_tokens: cmd.max_new, jobs: cmd.jobs };
    let factory = || cmd.adapter.open();
    ensure_out(&cmd.out)?;

    const METRICS: &str =
        "spotting_f1_micro,spotting_f1_macro,understanding_f1,average_f1,n_samples,n_errored";
    if let Some(raw) = &cmd.weights {
        let weights: Vec<f64> = raw
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("--weights: {p:?} is not a number")))
            })
            .collect::<Result<_, _>>()?;
        if weights.is_empty() {
            return Err(CliError::Usage("--weights lists no values".into()));
        }
        let rows = glc::sweep_fusion_weight(&factory, &samples, &weights, &config, &opts)?;
        let mut csv = format!("weight,{METRICS}\n");
        for row in &rows {
            csv.push_str(&format!("{},{}\n", row.weight, report_csv_fields(&row.report)));
        }
        write_out(&cmd.out.join("sweep.csv"), &csv)?;
        write_json(&cmd.out.join("sweep.json"), &rows)?;
        emit!("swept {} fusion weights; wrote {}", rows.len(), cmd.out.join("sweep.csv").display());
    } else {
        let raw = cmd.layer_ranges.as_deref().expect("clap enforces one sweep axis");
        let mut ranges = Vec::new();
        for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (lo, hi) = part.split_once(':').ok_or_else(|| {
                CliError::Usage(format!("--layer-ranges: {part:?} is not LO:HI"))
            })?;
            let parse = |v: &str| -> Result<usize, CliError> {
                v.parse()
                    .map_err(|_| CliError::Usage(format!("--layer-ranges: bad bound {v:?}")))
            };
            ranges.push((parse(lo)?, parse(hi)?));
        }
        if ranges.is_empty() {
            return Err(CliError::Usage("--layer-ranges lists no ranges".into()));
        }
        let rows = glc::sweep_layer_ranges(&factory, &samples, &ranges, cmd.seed, &config, &opts)?;
        let mut csv = format!("lo,hi,{METRICS}\n");
        for row in &rows {
            csv.push_str(&format!("{},{},{}\n", row.lo, row.hi, report_csv_fields(&row.report)));
        }
        write_out(&cmd.out.join("sweep.csv"), &csv)?;
        write_json(&cmd.out.join("sweep.json"), &rows)?;
        emit!("swept {} layer ranges; wrote {}", rows.len(), cmd.out.join("sweep.csv").display());
    }
    Ok(())
}
