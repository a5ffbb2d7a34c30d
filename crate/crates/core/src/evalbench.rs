//! Benchmark ingestion and scoring: word-level spotting F1, multiple-choice
//! understanding accuracy, per-category aggregation, and the end-to-end
//! harness that drives a provider over a JSONL manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::ProviderFactory;
use crate::error::{Error, Result};
use crate::glc::{decode_with_correction, CorrectionConfig};
use crate::tokenizer::ByteTokenizer;
use crate::trace::QuadBox;

/// JSON Schema for one manifest line, shipped for external producers and
/// printable via the CLI.
pub const MANIFEST_SCHEMA: &str = include_str!("manifest.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Spotting,
    Understanding,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::Spotting => write!(f, "spotting"),
            TaskKind::Understanding => write!(f, "understanding"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Business,
    Industry,
    Transportation,
    PublicFacilities,
    DailyLife,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Category::Business => "business",
            Category::Industry => "industry",
            Category::Transportation => "transportation",
            Category::PublicFacilities => "public_facilities",
            Category::DailyLife => "daily_life",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

/// One benchmark sample, as serialized per JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub sample_id: String,
    /// Path to an image, or a synthetic spec string; this toolkit only uses
    /// it for provenance (pixels never enter, boxes carry the geometry).
    pub image_ref: String,
    #[serde(default)]
    pub boxes: Vec<QuadBox>,
    #[serde(default)]
    pub gt_words: Vec<String>,
    pub task: TaskKind,
    pub question: String,
    #[serde(default)]
    pub choices: Option<Vec<Choice>>,
    #[serde(default)]
    pub answer_labels: Option<Vec<String>>,
    pub category: Category,
}

impl BenchmarkSample {
    pub fn validate(&self) -> Result<()> {
        if self.sample_id.is_empty() {
            return Err(Error::validation("sample_id must be non-empty"));
        }
        match self.task {
            TaskKind::Spotting => {
                if self.gt_words.is_empty() {
                    return Err(Error::validation(format!(
                        "spotting sample {} needs non-empty gt_words",
                        self.sample_id
                    )));
                }
            }
            TaskKind::Understanding => {
                let choices = self.choices.as_deref().unwrap_or_default();
                if choices.len() < 2 || choices.len() > 4 {
                    return Err(Error::validation(format!(
                        "understanding sample {} needs 2-4 choices, got {}",
                        self.sample_id,
                        choices.len()
                    )));
                }
                let mut labels = std::collections::BTreeSet::new();
                for c in choices {
                    if !labels.insert(c.label.to_ascii_uppercase()) {
                        return Err(Error::validation(format!(
                            "understanding sample {}: duplicate label {}",
                            self.sample_id, c.label
                        )));
                    }
                }
                let answers = self.answer_labels.as_deref().unwrap_or_default();
                if answers.is_empty() {
                    return Err(Error::validation(format!(
                        "understanding sample {} needs at least one answer label",
                        self.sample_id
                    )));
                }
                for a in answers {
                    if !labels.contains(&a.to_ascii_uppercase()) {
                        return Err(Error::validation(format!(
                            "understanding sample {}: answer label {a} not among choices",
                            self.sample_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parse a JSONL manifest, attaching 1-based line numbers to any error.
/// Blank lines are skipped; an empty file yields an empty list.
pub fn load_manifest(path: &Path) -> Result<Vec<BenchmarkSample>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: BenchmarkSample = serde_json::from_str(line)
            .map_err(|e| Error::Manifest { line: i + 1, msg: e.to_string() })?;
        sample
            .validate()
            .map_err(|e| Error::Manifest { line: i + 1, msg: e.to_string() })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Case-fold and strip leading/trailing non-alphanumerics. Words that
/// normalize to nothing are dropped by the matcher.
pub fn normalize_word(word: &str) -> String {
    word.trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Word-level multiset matching: each ground-truth word consumes at most one
/// prediction. Both empty → (1,1,1); one side empty → (0,0,0).
pub fn spotting_f1(predicted: &[String], gt: &[String]) -> (f64, f64, f64) {
    let (matched, n_pred, n_gt) = spotting_counts(predicted, gt);
    spotting_prf(matched, n_pred, n_gt)
}

/// The raw counts behind spotting F1, exposed for micro-averaged pooling.
pub fn spotting_counts(predicted: &[String], gt: &[String]) -> (usize, usize, usize) {
    let norm = |words: &[String]| -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for w in words {
            let n = normalize_word(w);
            if !n.is_empty() {
                *counts.entry(n).or_insert(0) += 1;
            }
        }
        counts
    };
    let p = norm(predicted);
    let g = norm(gt);
    let matched: usize = p
        .iter()
        .map(|(w, &c)| c.min(g.get(w).copied().unwrap_or(0)))
        .sum();
    (matched, p.values().sum(), g.values().sum())
}

pub fn spotting_prf(matched: usize, n_pred: usize, n_gt: usize) -> (f64, f64, f64) {
    if n_pred == 0 && n_gt == 0 {
        return (1.0, 1.0, 1.0);
    }
    if n_pred == 0 || n_gt == 0 {
        return (0.0, 0.0, 0.0);
    }
    let p = matched as f64 / n_pred as f64;
    let r = matched as f64 / n_gt as f64;
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// First standalone choice letter (A–D, either case) in a free-form answer.
pub fn extract_choice_label(answer: &str) -> Option<String> {
    // \b fails on letters glued to punctuation like "(a)"; this regex keys
    // on non-alphanumeric boundaries instead.
    let re = regex::Regex::new(r"(?:^|[^[:alnum:]])([A-Da-d])(?:[^[:alnum:]]|$)")
        .expect("static regex compiles");
    re.captures(answer).map(|c| c[1].to_ascii_uppercase())
}

/// Score one understanding answer: 1 for a predicted label among the answer
/// labels. `flagged` marks answers with no parsable label or a label outside
/// the sample's choice set.
pub fn understanding_score(predicted_label: Option<&str>, sample: &BenchmarkSample) -> (bool, bool) {
    let choices: Vec<String> = sample
        .choices
        .as_deref()
        .unwrap_or_default()
        .iter()
        .map(|c| c.label.to_ascii_uppercase())
        .collect();
    let answers: Vec<String> = sample
        .answer_labels
        .as_deref()
        .unwrap_or_default()
        .iter()
        .map(|a| a.to_ascii_uppercase())
        .collect();
    match predicted_label {
        None => (false, true),
        Some(raw) => {
            let label = raw.to_ascii_uppercase();
            if !choices.contains(&label) {
                (false, true)
            } else {
                (answers.contains(&label), false)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTaskScores {
    /// Micro-pooled spotting F1 (the primary spotting number).
    pub spotting_f1: Option<f64>,
    /// Fraction of understanding samples answered correctly.
    pub understanding_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub task: TaskKind,
    pub category: Category,
    pub n: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: PerTaskScores,
    /// Mean of the per-task scores that are present.
    pub average_f1: f64,
    /// Same pooling as per_task.spotting_f1, kept alongside the macro
    /// variant so both conventions are visible.
    pub spotting_f1_micro: Option<f64>,
    /// Mean of per-sample spotting F1.
    pub spotting_f1_macro: Option<f64>,
    pub per_category: Vec<CategoryRow>,
    /// Samples scored (errored ones excluded).
    pub n_samples: usize,
    pub n_errored: usize,
    /// Understanding answers with no usable choice label.
    pub n_label_flags: usize,
    pub config_digest: String,
}

impl EvalReport {
    /// CSV with exactly the per-category rows: task, category, n, score.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,category,n,score\n");
        for row in &self.per_category {
            out.push_str(&format!("{},{},{},{}\n", row.task, row.category, row.n, row.score));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub max_new_tokens: usize,
    /// Worker count; forced to 1 when the provider is not parallel-safe.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { max_new_tokens: 24, jobs: 1 }
    }
}

/// Build the text prompt a provider sees for a sample.
pub fn sample_prompt(sample: &BenchmarkSample) -> String {
    match sample.task {
        TaskKind::Spotting => sample.question.clone(),
        TaskKind::Understanding => {
            let mut s = sample.question.clone();
            for c in sample.choices.as_deref().unwrap_or_default() {
                s.push(' ');
                s.push_str(&c.label);
                s.push('.');
                s.push_str(&c.text);
            }
            s
        }
    }
}

#[derive(Debug, Clone)]
struct SampleResult {
    sample_id: String,
    category: Category,
    /// (matched, n_pred, n_gt, f1) for spotting samples.
    spotting: Option<(usize, usize, usize, f64)>,
    correct: Option<bool>,
    flagged: bool,
    error: Option<String>,
}

fn evaluate_one(
    provider: &mut dyn crate::adapters::TraceProvider,
    sample: &BenchmarkSample,
    config: &CorrectionConfig,
    opts: &RunOptions,
) -> SampleResult {
    let mut result = SampleResult {
        sample_id: sample.sample_id.clone(),
        category: sample.category,
        spotting: None,
        correct: None,
        flagged: false,
        error: None,
    };
    let attempt = (|| -> Result<()> {
        let vocab = provider.metadata().vocab;
        let tok = ByteTokenizer::new(vocab)?;
        let prompt = tok.encode(&sample_prompt(sample));
        let (tokens, _) = decode_with_correction(provider, &prompt, config, opts.max_new_tokens)?;
        let answer = tok.decode(&tokens);
        match sample.task {
            TaskKind::Spotting => {
                let words: Vec<String> =
                    answer.split_whitespace().map(str::to_string).collect();
                let (matched, n_pred, n_gt) = spotting_counts(&words, &sample.gt_words);
                let (_, _, f1) = spotting_prf(matched, n_pred, n_gt);
                result.spotting = Some((matched, n_pred, n_gt, f1));
            }
            TaskKind::Understanding => {
                let label = extract_choice_label(&answer);
                let (correct, flagged) = understanding_score(label.as_deref(), sample);
                result.correct = Some(correct);
                result.flagged = flagged;
            }
        }
        Ok(())
    })();
    if let Err(e) = attempt {
        result.error = Some(e.to_string());
    }
    result
}

/// Run the full protocol: decode every sample with correction, score per
/// task, aggregate per category. Deterministic given config and provider;
/// errored samples are excluded from every denominator and counted.
pub fn run_benchmark(
    factory: ProviderFactory,
    samples: &[BenchmarkSample],
    config: &CorrectionConfig,
    opts: &RunOptions,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("benchmark manifest holds no samples".into()));
    }
    config.validate()?;

    let probe = factory()?;
    let jobs = if probe.metadata().parallel_safe {
        opts.jobs.max(1).min(samples.len())
    } else {
        1
    };
    drop(probe);

    let mut results: Vec<Option<SampleResult>> = vec![None; samples.len()];
    if jobs <= 1 {
        let mut provider = factory()?;
        for (i, s) in samples.iter().enumerate() {
            results[i] = Some(evaluate_one(provider.as_mut(), s, config, opts));
        }
    } else {
        let slots: Vec<std::sync::Mutex<Option<SampleResult>>> =
            (0..samples.len()).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for worker in 0..jobs {
                let slots = &slots;
                let handle = scope.spawn(move || -> Result<()> {
                    let mut provider = factory()?;
                    for i in (worker..samples.len()).step_by(jobs) {
                        let r = evaluate_one(provider.as_mut(), &samples[i], config, opts);
                        *slots[i].lock().expect("result slot") = Some(r);
                    }
                    Ok(())
                });
                handles.push(handle);
            }
            for h in handles {
                h.join().expect("eval worker panicked")?;
            }
            Ok(())
        })?;
        for (slot, out) in slots.into_iter().zip(results.iter_mut()) {
            *out = slot.into_inner().expect("result slot");
        }
    }

    // Deterministic fold regardless of completion order: sort by sample_id.
    let mut results: Vec<SampleResult> =
        results.into_iter().map(|r| r.expect("filled")).collect();
    results.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut n_errored = 0usize;
    let mut n_label_flags = 0usize;
    let mut micro = (0usize, 0usize, 0usize);
    let mut sample_f1s = Vec::new();
    let mut n_understood = 0usize;
    let mut n_correct = 0usize;
    // (task, category) → (n, score accumulator) with category-local pooling.
    let mut cat_spot: BTreeMap<Category, (usize, usize, usize, usize)> = BTreeMap::new();
    let mut cat_und: BTreeMap<Category, (usize, usize)> = BTreeMap::new();

    for r in &results {
        if r.error.is_some() {
            n_errored += 1;
            continue;
        }
        if let Some((m, p, g, f1)) = r.spotting {
            micro.0 += m;
            micro.1 += p;
            micro.2 += g;
            sample_f1s.push(f1);
            let e = cat_spot.entry(r.category).or_insert((0, 0, 0, 0));
            e.0 += 1;
            e.1 += m;
            e.2 += p;
            e.3 += g;
        }
        if let Some(c) = r.correct {
            n_understood += 1;
            n_correct += usize::from(c);
            if r.flagged {
                n_label_flags += 1;
            }
            let e = cat_und.entry(r.category).or_insert((0, 0));
            e.0 += 1;
            e.1 += usize::from(c);
        }
    }

    let spotting_micro = if sample_f1s.is_empty() {
        None
    } else {
        Some(spotting_prf(micro.0, micro.1, micro.2).2)
    };
    let spotting_macro = if sample_f1s.is_empty() {
        None
    } else {
        Some(sample_f1s.iter().sum::<f64>() / sample_f1s.len() as f64)
    };
    let understanding = if n_understood == 0 {
        None
    } else {
        Some(n_correct as f64 / n_understood as f64)
    };
    let present: Vec<f64> = [spotting_micro, understanding].into_iter().flatten().collect();
    if present.is_empty() {
        return Err(Error::Data("every sample errored; nothing to score".into()));
    }
    let average_f1 = present.iter().sum::<f64>() / present.len() as f64;

    let mut per_category = Vec::new();
    for (cat, (n, m, p, g)) in &cat_spot {
        per_category.push(CategoryRow {
            task: TaskKind::Spotting,
            category: *cat,
            n: *n,
            score: spotting_prf(*m, *p, *g).2,
        });
    }
    for (cat, (n, c)) in &cat_und {
        per_category.push(CategoryRow {
            task: TaskKind::Understanding,
            category: *cat,
            n: *n,
            score: *c as f64 / *n as f64,
        });
    }
    per_category.sort_by_key(|r| (r.task, r.category));

    Ok(EvalReport {
        per_task: PerTaskScores {
            spotting_f1: spotting_micro,
            understanding_f1: understanding,
        },
        average_f1,
        spotting_f1_micro: spotting_micro,
        spotting_f1_macro: spotting_macro,
        per_category,
        n_samples: results.len() - n_errored,
        n_errored,
        n_label_flags,
        config_digest: config.digest(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::TraceProvider;
    use crate::toy::{ToyModel, ToyParams};

    fn spot(id: &str, gt: &[&str]) -> BenchmarkSample {
        BenchmarkSample {
            sample_id: id.into(),
            image_ref: format!("synthetic://{id}"),
            boxes: vec![],
            gt_words: gt.iter().map(|s| s.to_string()).collect(),
            task: TaskKind::Spotting,
            question: "What text is visible?".into(),
            choices: None,
            answer_labels: None,
            category: Category::Business,
        }
    }

    fn mc(id: &str, labels: &[&str], answers: &[&str], category: Category) -> BenchmarkSample {
        BenchmarkSample {
            sample_id: id.into(),
            image_ref: format!("synthetic://{id}"),
            boxes: vec![],
            gt_words: vec![],
            task: TaskKind::Understanding,
            question: "Which word appears?".into(),
            choices: Some(
                labels
                    .iter()
                    .map(|l| Choice { label: l.to_string(), text: format!("option {l}") })
                    .collect(),
            ),
            answer_labels: Some(answers.iter().map(|s| s.to_string()).collect()),
            category,
        }
    }

    #[test]
    fn word_normalization() {
        assert_eq!(normalize_word("  STOP. "), "stop");
        assert_eq!(normalize_word("\"café\""), "café");
        assert_eq!(normalize_word("!!"), "");
        assert_eq!(normalize_word("don't"), "don't", "inner punctuation survives");
    }

    #[test]
    fn spotting_f1_core_cases() {
        let w = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(spotting_f1(&w(&["stop"]), &w(&["STOP"])), (1.0, 1.0, 1.0));
        let (p, r, f1) = spotting_f1(&w(&["stop", "go"]), &w(&["stop"]));
        assert_eq!((p, r), (0.5, 1.0));
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        // The verbatim-vs-plausible case: the literal match scores, the
        // semantically "corrected" guess does not.
        assert_eq!(spotting_f1(&w(&["MMOTEL"]), &w(&["MMOTEL"])).2, 1.0);
        assert_eq!(spotting_f1(&w(&["MOTEL"]), &w(&["MMOTEL"])).2, 0.0);
        assert_eq!(spotting_f1(&w(&[]), &w(&[])), (1.0, 1.0, 1.0));
        assert_eq!(spotting_f1(&w(&[]), &w(&["x"])), (0.0, 0.0, 0.0));
        assert_eq!(spotting_f1(&w(&["x"]), &w(&[])), (0.0, 0.0, 0.0));
        // Multiset: a repeated prediction only matches once.
        let (p, r, _) = spotting_f1(&w(&["a", "a"]), &w(&["a"]));
        assert_eq!((p, r), (0.5, 1.0));
    }

    #[test]
    fn spotting_f1_is_permutation_symmetric() {
        let a: Vec<String> = ["one", "two", "three"].iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = ["three", "one", "two"].iter().map(|s| s.to_string()).collect();
        let gt: Vec<String> = ["two", "three"].iter().map(|s| s.to_string()).collect();
        assert_eq!(spotting_f1(&a, &gt), spotting_f1(&b, &gt));
    }

    #[test]
    fn label_extraction() {
        assert_eq!(extract_choice_label("The answer is B."), Some("B".into()));
        assert_eq!(extract_choice_label("b"), Some("B".into()));
        assert_eq!(extract_choice_label("(c) because..."), Some("C".into()));
        assert_eq!(extract_choice_label("Definitely D"), Some("D".into()));
        assert_eq!(extract_choice_label("cab"), None, "letters inside words don't count");
        assert_eq!(extract_choice_label(""), None);
        assert_eq!(extract_choice_label("A B"), Some("A".into()), "first match wins");
    }

    #[test]
    fn understanding_scoring_and_flags() {
        let s = mc("u1", &["A", "B", "C"], &["B"], Category::DailyLife);
        assert_eq!(understanding_score(Some("B"), &s), (true, false));
        assert_eq!(understanding_score(Some("b"), &s), (true, false));
        assert_eq!(understanding_score(Some("A"), &s), (false, false));
        // D parses as a label but is not among this sample's choices.
        assert_eq!(understanding_score(Some("D"), &s), (false, true));
        assert_eq!(understanding_score(None, &s), (false, true));
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let good = [
            serde_json::to_string(&spot("s1", &["exit"])).unwrap(),
            String::new(),
            serde_json::to_string(&mc("u1", &["A", "B"], &["A"], Category::Industry)).unwrap(),
        ]
        .join("\n");
        std::fs::write(&p, &good).unwrap();
        let samples = load_manifest(&p).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0], spot("s1", &["exit"]));

        std::fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());

        std::fs::write(&p, "{broken\n").unwrap();
        match load_manifest(&p).unwrap_err() {
            Error::Manifest { line, .. } => assert_eq!(line, 1),
            e => panic!("wrong error {e}"),
        }

        // Five choices violate the 2-4 rule; error cites line 2.
        let five = serde_json::to_string(&mc(
            "u2",
            &["A", "B", "C", "D", "E"],
            &["A"],
            Category::Business,
        ))
        .unwrap();
        std::fs::write(&p, format!("{}\n{five}\n", serde_json::to_string(&spot("s", &["x"])).unwrap()))
            .unwrap();
        match load_manifest(&p).unwrap_err() {
            Error::Manifest { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("2-4 choices"));
            }
            e => panic!("wrong error {e}"),
        }

        // Spotting without gt_words.
        std::fs::write(
            &p,
            r#"{"sample_id":"x","image_ref":"i","task":"spotting","question":"q","category":"business"}"#,
        )
        .unwrap();
        assert!(load_manifest(&p).is_err());
    }

    fn toy_factory(params: ToyParams) -> impl Fn() -> Result<Box<dyn TraceProvider>> + Sync {
        move || Ok(Box::new(ToyModel::new(params.clone())?) as Box<dyn TraceProvider>)
    }

    fn small_manifest() -> Vec<BenchmarkSample> {
        vec![
            spot("s1", &["stop"]),
            spot("s2", &["exit", "here"]),
            mc("u1", &["A", "B"], &["A"], Category::Transportation),
            mc("u2", &["A", "B", "C"], &["C"], Category::Transportation),
        ]
    }

    fn toy_run_params() -> ToyParams {
        // Byte tokenizer needs vocab ≥ 256; keep the model tiny otherwise.
        ToyParams {
            layers: 2,
            heads: 2,
            d_model: 16,
            vocab: 300,
            n_image_tokens: 4,
            seed: 13,
            eos_token_id: None,
        }
    }

    #[test]
    fn benchmark_is_deterministic_and_aggregates() {
        let factory = toy_factory(toy_run_params());
        let samples = small_manifest();
        let config = CorrectionConfig::default();
        let opts = RunOptions { max_new_tokens: 6, jobs: 1 };
        let r1 = run_benchmark(&factory, &samples, &config, &opts).unwrap();
        let r2 = run_benchmark(&factory, &samples, &config, &opts).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.n_samples, 4);
        assert_eq!(r1.n_errored, 0);
        let (s, u) = (
            r1.per_task.spotting_f1.unwrap(),
            r1.per_task.understanding_f1.unwrap(),
        );
        assert!((r1.average_f1 - (s + u) / 2.0).abs() < 1e-15);
        assert!(s >= 0.0 && s <= 1.0 && u >= 0.0 && u <= 1.0);
        // Category rows: spotting/business, understanding/transportation.
        assert_eq!(r1.per_category.len(), 2);
        assert_eq!(r1.per_category[0].task, TaskKind::Spotting);
        assert_eq!(r1.per_category[0].n, 2);
        assert_eq!(r1.per_category[1].n, 2);
        let csv = r1.to_csv();
        assert!(csv.starts_with("task,category,n,score\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn parallel_run_matches_sequential() {
        let factory = toy_factory(toy_run_params());
        let samples = small_manifest();
        let config = CorrectionConfig::default();
        let seq = run_benchmark(&factory, &samples, &config, &RunOptions { max_new_tokens: 5, jobs: 1 })
            .unwrap();
        let par = run_benchmark(&factory, &samples, &config, &RunOptions { max_new_tokens: 5, jobs: 3 })
            .unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn errored_samples_are_excluded_not_fatal() {
        // vocab 300 < byte values? No — make one sample's prompt un-encodable
        // by... byte tokenizer never fails to encode; instead break decode by
        // giving the provider a vocab < 256 so ByteTokenizer::new errors.
        let factory = toy_factory(ToyParams { vocab: 64, ..toy_run_params() });
        let samples = small_manifest();
        let config = CorrectionConfig::default();
        let err = run_benchmark(&factory, &samples, &config, &RunOptions::default());
        // All samples error → the report itself is an error.
        assert!(err.is_err());

        // Mixed case: patch in a provider whose vocab works, then check that
        // per-sample scores are independent of errored neighbours by
        // comparing to a manifest without an errored candidate. With the toy
        // provider nothing errors, so emulate via an adapter that rejects
        // long prompts.
        struct Flaky(ToyModel);
        impl TraceProvider for Flaky {
            fn metadata(&self) -> crate::adapters::ProviderInfo {
                self.0.metadata()
            }
            fn prefill(&mut self, p: &[u32]) -> Result<crate::trace::MultimodalTrace> {
                if p.len() > 30 {
                    return Err(Error::Adapter("prompt too long".into()));
                }
                self.0.prefill(p)
            }
            fn step(&mut self, t: u32) -> Result<crate::adapters::StepOutput> {
                self.0.step(t)
            }
        }
        let flaky_factory = |params: ToyParams| {
            move || {
                Ok(Box::new(Flaky(ToyModel::new(params.clone())?)) as Box<dyn TraceProvider>)
            }
        };
        let f = flaky_factory(toy_run_params());
        // "Which word appears? A.option A B.option B" exceeds 30 bytes → the
        // understanding samples error; spotting prompt fits.
        let rep = run_benchmark(&f, &small_manifest(), &config, &RunOptions { max_new_tokens: 4, jobs: 1 })
            .unwrap();
        assert_eq!(rep.n_errored, 2);
        assert_eq!(rep.n_samples, 2);
        assert!(rep.per_task.understanding_f1.is_none());
        // Same spotting scores as a run over just the spotting samples.
        let only_spotting: Vec<_> = small_manifest().into_iter().take(2).collect();
        let clean = run_benchmark(
            &toy_factory(toy_run_params()),
            &only_spotting,
            &config,
            &RunOptions { max_new_tokens: 4, jobs: 1 },
        )
        .unwrap();
        assert_eq!(rep.per_task.spotting_f1, clean.per_task.spotting_f1);
        assert_eq!(rep.spotting_f1_macro, clean.spotting_f1_macro);
    }

    #[test]
    fn empty_manifest_is_a_data_error() {
        let factory = toy_factory(toy_run_params());
        let err =
            run_benchmark(&factory, &[], &CorrectionConfig::default(), &RunOptions::default())
                .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn shipped_schema_matches_the_serde_shape() {
        let schema: serde_json::Value = serde_json::from_str(MANIFEST_SCHEMA).unwrap();
        let required: Vec<&str> = schema["required"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        assert_eq!(required, ["sample_id", "image_ref", "task", "question", "category"]);
        // Every key a serialized sample produces exists in the schema.
        let sample =
            serde_json::to_value(mc("u", &["A", "B"], &["A"], Category::PublicFacilities)).unwrap();
        let props = schema["properties"].as_object().unwrap();
        for k in sample.as_object().unwrap().keys() {
            assert!(props.contains_key(k), "schema missing property {k}");
        }
        // Enum strings agree with the serde renames.
        let cats = schema["properties"]["category"]["enum"].as_array().unwrap();
        for c in [
            Category::Business,
            Category::Industry,
            Category::Transportation,
            Category::PublicFacilities,
            Category::DailyLife,
        ] {
            let s = serde_json::to_value(c).unwrap();
            assert!(cats.contains(&s), "{s} missing from schema enum");
        }
        let tasks = schema["properties"]["task"]["enum"].as_array().unwrap();
        for t in [TaskKind::Spotting, TaskKind::Understanding] {
            assert!(tasks.contains(&serde_json::to_value(t).unwrap()));
        }
    }

    #[test]
    fn prompt_composition() {
        let s = mc("u", &["A", "B"], &["B"], Category::Business);
        assert_eq!(sample_prompt(&s), "Which word appears? A.option A B.option B");
        let sp = spot("s", &["x"]);
        assert_eq!(sample_prompt(&sp), "What text is visible?");
    }
}
