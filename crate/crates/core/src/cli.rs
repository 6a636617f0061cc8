//! The `poca` command line. [`run`] takes the argument list and output
//! streams and returns the process exit code, so tests can drive it
//! in-process.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::archive;
use crate::backends::{
    BackendConfig, CachedBackend, ChatBackend, ChatNliJudge, ChatRequest, Completion, Embedder,
    HttpChatBackend, HttpEmbedder, NliJudge, ResponseCache,
};
use crate::config::{ConfigError, RunConfig};
use crate::evaluation::{evaluate_paragraph, EvalMode, RefusalList, VqaEvaluator, VqaItem};
use crate::evaluation::{NO_CAPTION_SYSTEM_PROMPT, VQA_ASSISTANT_PREFIX, VQA_SYSTEM_PROMPT};
use crate::pipeline::{
    read_manifest, run_pipeline, sections_to_string, RunOptions, RunRecord, TemplatePreset,
};
use crate::synthetic;
use crate::theory::{run_monte_carlo, run_violation_study, MonteCarloSummary, Perturbation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ITEM_FAILURES: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CONFIG_ECHO: &str = "config.toml";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const HISTOGRAM_FILE: &str = "gap_histogram.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(
    name = "poca",
    version,
    about = "Caption-pyramid simulator, pipeline, and evaluator"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Response cache directory.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Use the built-in rule-based mock backends for every role.
    #[arg(long, global = true)]
    pub mock: bool,
    #[arg(long, global = true)]
    pub depth: Option<u32>,
    /// Merge template: corrected, paper-verbatim, or naive.
    #[arg(long, global = true)]
    pub template: Option<TemplatePreset>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo check of the merged-error bound.
    Simulate {
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Caption every image in a manifest and merge the pyramid.
    Pipeline {
        /// JSON-lines manifest; overrides `io.manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Score the captions in a pipeline archive.
    Eval {
        archive: PathBuf,
        /// vqa or paragraph; overrides `eval.mode`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Write the built-in prompt templates as text files.
    ExportPrompts,
    /// Verify an archive and print its summary.
    Report { archive: PathBuf },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e.0)
    }
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_ITEM_FAILURES,
        message: format!("{}: {e}", path.display()),
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    match &cli.command {
        Command::Simulate { trials } => {
            let mut cfg = load_config(cli, cli.config.as_deref())?;
            if let Some(t) = trials {
                cfg.simulate.trials = *t;
            }
            cfg.validate()?;
            cmd_simulate(&cfg, out)
        }
        Command::Pipeline { manifest } => {
            let mut cfg = load_config(cli, cli.config.as_deref())?;
            if let Some(m) = manifest {
                cfg.io.manifest = Some(m.clone());
            }
            cmd_pipeline(&cfg, cli.mock, out)
        }
        Command::Eval { archive, mode } => cmd_eval(cli, archive, mode.as_deref(), out),
        Command::ExportPrompts => {
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("prompts"));
            cmd_export_prompts(&dir, out)
        }
        Command::Report { archive } => cmd_report(archive, out),
    }
}

fn load_config(cli: &Cli, path: Option<&Path>) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.io.out = o.clone();
    }
    if let Some(c) = &cli.cache {
        cfg.io.cache = Some(c.clone());
    }
    if let Some(d) = cli.depth {
        cfg.pipeline.depth = d;
    }
    if let Some(t) = cli.template {
        cfg.pipeline.template = t;
        cfg.pipeline.template_file = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))
}

fn write_file(
    dir: &Path,
    name: &str,
    contents: impl AsRef<[u8]>,
) -> std::result::Result<(), Failure> {
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| io_fail(&p, e))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> std::result::Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report values serialize");
    write_file(dir, name, text + "\n")
}

fn seal(dir: &Path) -> std::result::Result<(), Failure> {
    archive::seal(dir).map(|_| ()).map_err(|e| io_fail(dir, e))
}

fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> CmdResult {
    let configs = cfg.simulate.monte_carlo_configs(cfg.seed)?;
    let mut runs: Vec<MonteCarloSummary> = Vec::new();
    let mut studies: Vec<MonteCarloSummary> = Vec::new();
    for (i, mc) in configs.iter().enumerate() {
        runs.push(run_monte_carlo(mc).map_err(|e| Failure::usage(format!("simulate: {e}")))?);
        // A convex replacement ignores the configured phi, so one run covers it.
        let once = matches!(cfg.simulate.study, Some(Perturbation::ConvexPhi { .. }));
        if let Some(p) = cfg.simulate.study.filter(|_| !once || i == 0) {
            studies.push(
                run_violation_study(mc, p)
                    .map_err(|e| Failure::usage(format!("simulate.study: {e}")))?,
            );
        }
    }
    let holds = runs.iter().all(MonteCarloSummary::holds);

    let dir = &cfg.io.out;
    prepare_out(dir)?;
    write_file(dir, CONFIG_ECHO, cfg.to_toml())?;
    write_json(
        dir,
        SUMMARY_FILE,
        &json!({"command": "simulate", "holds": holds, "runs": runs, "studies": studies}),
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| io_fail(&dir.join(HISTOGRAM_FILE), e);
    w.write_record(["run", "phi", "bin_lo", "bin_hi", "count"])
        .map_err(csv_err)?;
    for (kind, list) in [("baseline", &runs), ("study", &studies)] {
        for s in list.iter() {
            for (lo, hi, count) in s.histogram.rows() {
                w.write_record([
                    kind.to_string(),
                    s.phi.clone(),
                    lo.to_string(),
                    hi.to_string(),
                    count.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| io_fail(&dir.join(HISTOGRAM_FILE), e))?;
    write_file(dir, HISTOGRAM_FILE, bytes)?;
    seal(dir)?;

    let _ = writeln!(
        out,
        "{:<16} {:>8} {:>10} {:>12} {:>12}  mode",
        "phi", "trials", "violations", "frequency", "min gap"
    );
    for (mode, list) in [("theorem", &runs), ("study", &studies)] {
        for s in list.iter() {
            let _ = writeln!(
                out,
                "{:<16} {:>8} {:>10} {:>12.6} {:>12.3e}  {mode}",
                s.phi,
                s.trials,
                s.violations.total(),
                s.violation_frequency,
                s.gap_quantiles.min
            );
        }
    }
    let _ = writeln!(
        out,
        "bound {}; archive {}",
        if holds { "holds" } else { "VIOLATED" },
        dir.display()
    );
    Ok(if holds { EXIT_OK } else { EXIT_ITEM_FAILURES })
}

/// Counts calls that actually reach the wrapped backend.
struct Counted {
    inner: Box<dyn ChatBackend>,
    calls: AtomicUsize,
}

impl ChatBackend for Counted {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn complete(&self, request: &ChatRequest) -> crate::backends::Result<Completion> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.complete(request)
    }
}

struct Role {
    counted: Arc<Counted>,
    backend: Arc<dyn ChatBackend>,
}

impl Role {
    fn calls(&self) -> usize {
        self.counted.calls.load(Ordering::Relaxed)
    }
}

fn open_cache(cfg: &RunConfig) -> std::result::Result<Option<Arc<ResponseCache>>, Failure> {
    cfg.io
        .cache
        .as_ref()
        .map(|dir| {
            ResponseCache::open(dir)
                .map(Arc::new)
                .map_err(|e| Failure::usage(e.to_string()))
        })
        .transpose()
}

fn make_role(
    role: &str,
    cfg: Option<&BackendConfig>,
    mock: Option<Box<dyn ChatBackend>>,
    cache: &Option<Arc<ResponseCache>>,
) -> std::result::Result<Role, Failure> {
    let inner: Box<dyn ChatBackend> = match (mock, cfg) {
        (Some(m), _) => m,
        (None, Some(c)) => Box::new(
            HttpChatBackend::new(c.model_id.clone(), c.clone())
                .map_err(|e| Failure::usage(format!("backends.{role}: {e}")))?,
        ),
        (None, None) => {
            return Err(Failure::usage(format!(
                "backends.{role} is not configured (pass --mock for the built-in mock)"
            )))
        }
    };
    let counted = Arc::new(Counted {
        inner,
        calls: AtomicUsize::new(0),
    });
    let backend: Arc<dyn ChatBackend> = match cache {
        Some(c) => Arc::new(CachedBackend::new(counted.clone(), c.clone())),
        None => counted.clone(),
    };
    Ok(Role { counted, backend })
}

fn cmd_pipeline(cfg: &RunConfig, mock: bool, out: &mut dyn Write) -> CmdResult {
    let manifest_path = cfg
        .io
        .manifest
        .as_ref()
        .ok_or_else(|| Failure::usage("io.manifest is not set (or pass --manifest)"))?;
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Failure::usage(format!("{}: {e}", manifest_path.display())))?;
    let items = read_manifest(&text)
        .map_err(|e| Failure::usage(format!("{}: {e}", manifest_path.display())))?;
    let base_dir = manifest_path
        .parent()
        .unwrap_or(Path::new(""))
        .to_path_buf();
    let template = cfg.pipeline.merge_template()?;

    let cache = open_cache(cfg)?;
    let captioner = make_role(
        "captioner",
        cfg.backends.captioner.as_ref(),
        mock.then(|| Box::new(synthetic::captioner("mock-captioner")) as Box<dyn ChatBackend>),
        &cache,
    )?;
    let merger = make_role(
        "merger",
        cfg.backends.merger.as_ref(),
        mock.then(|| Box::new(synthetic::merger("mock-merger")) as Box<dyn ChatBackend>),
        &cache,
    )?;

    let opts = RunOptions {
        depth: cfg.pipeline.depth,
        prompt_kind: cfg.pipeline.prompt_kind,
        template,
        baselines: cfg.pipeline.baselines,
        max_concurrent_images: cfg.pipeline.max_concurrent_images,
        record_wall_time: cfg.pipeline.record_wall_time,
        caption_params: Default::default(),
        merge_params: Default::default(),
    };

    let dir = &cfg.io.out;
    prepare_out(dir)?;
    write_file(dir, CONFIG_ECHO, cfg.to_toml())?;
    let records_path = dir.join(RECORDS_FILE);
    let file = fs::File::create(&records_path).map_err(|e| io_fail(&records_path, e))?;
    let mut sink = std::io::BufWriter::new(file);
    let run = run_pipeline(
        &items,
        &base_dir,
        &opts,
        captioner.backend.as_ref(),
        merger.backend.as_ref(),
        &mut sink,
    )
    .map_err(|e| io_fail(&records_path, e))?;
    sink.flush().map_err(|e| io_fail(&records_path, e))?;

    let failed = run.failed();
    let template_name = match &cfg.pipeline.template_file {
        Some(p) => p.display().to_string(),
        None => cfg.pipeline.template.name().to_string(),
    };
    write_json(
        dir,
        SUMMARY_FILE,
        &json!({
            "command": "pipeline",
            "items": run.records.len(),
            "failed": failed,
            "depth": cfg.pipeline.depth,
            "template": template_name,
            "caption_calls": run.records.iter().map(|r| r.timing.caption_calls).sum::<usize>(),
            "merge_calls": run.records.iter().map(|r| r.timing.merge_calls).sum::<usize>(),
            "backend_calls": {"captioner": captioner.calls(), "merger": merger.calls()},
        }),
    )?;
    seal(dir)?;
    let _ = writeln!(
        out,
        "{} items, {} failed; backend calls: captioner {}, merger {}; archive {}",
        run.records.len(),
        failed,
        captioner.calls(),
        merger.calls(),
        dir.display()
    );
    for r in run.records.iter().filter(|r| !r.is_ok()) {
        for e in &r.errors {
            let _ = writeln!(out, "  {}: {}", r.id, e.message);
        }
    }
    Ok(if failed > 0 {
        EXIT_ITEM_FAILURES
    } else {
        EXIT_OK
    })
}

fn read_records(path: &Path) -> std::result::Result<Vec<RunRecord>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Failure::usage(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn read_vqa_items(path: &Path) -> std::result::Result<Vec<VqaItem>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Failure::usage(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn cmd_eval(cli: &Cli, archive_dir: &Path, mode: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let records_path = archive_dir.join(RECORDS_FILE);
    if !records_path.is_file() {
        return Err(Failure::usage(format!(
            "{} is not a pipeline archive (no {RECORDS_FILE})",
            archive_dir.display()
        )));
    }
    let cfg_path = cli
        .config
        .clone()
        .unwrap_or_else(|| archive_dir.join(CONFIG_ECHO));
    let cfg = load_config(cli, Some(&cfg_path))?;
    let mode = match mode {
        None => cfg.eval.mode,
        Some("vqa") => EvalMode::Vqa,
        Some("paragraph") => EvalMode::Paragraph,
        Some(other) => {
            return Err(Failure::usage(format!(
                "--mode: expected vqa or paragraph, got {other:?}"
            )))
        }
    };
    let records = read_records(&records_path)?;
    let cache = open_cache(&cfg)?;

    let report = match mode {
        EvalMode::Vqa => {
            let items = cfg
                .eval
                .vqa_manifest
                .as_deref()
                .map(read_vqa_items)
                .transpose()?;
            let answerer = make_role(
                "vqa_answerer",
                cfg.backends.vqa_answerer.as_ref(),
                cli.mock.then(|| {
                    Box::new(synthetic::answerer("mock-answerer")) as Box<dyn ChatBackend>
                }),
                &cache,
            )?;
            let judge_role = if !cfg.eval.nli {
                None
            } else if cli.mock {
                Some(make_role(
                    "nli_judge",
                    None,
                    Some(Box::new(synthetic::nli_backend("mock-nli"))),
                    &cache,
                )?)
            } else {
                cfg.backends
                    .nli_judge
                    .as_ref()
                    .map(|c| make_role("nli_judge", Some(c), None, &cache))
                    .transpose()?
            };
            let judge = judge_role
                .as_ref()
                .map(|r| ChatNliJudge::new(r.backend.clone()));
            let ev = VqaEvaluator {
                answerer: answerer.backend.as_ref(),
                judge: judge.as_ref().map(|j| j as &dyn NliJudge),
                refusals: RefusalList(cfg.eval.refusals.clone()),
                params: Default::default(),
                no_caption: cfg.eval.no_caption,
            };
            ev.evaluate(&records, items.as_deref())
                .map_err(|e| Failure::usage(format!("eval: {e}")))?
        }
        EvalMode::Paragraph => {
            let embedder: Option<Box<dyn Embedder>> = if !cfg.eval.clip {
                None
            } else if cli.mock {
                Some(Box::new(synthetic::embedder("mock-embedder")))
            } else {
                cfg.backends
                    .embedder
                    .as_ref()
                    .map(|c| {
                        HttpEmbedder::new(c.model_id.clone(), c.clone())
                            .map(|e| Box::new(e) as Box<dyn Embedder>)
                            .map_err(|e| Failure::usage(format!("backends.embedder: {e}")))
                    })
                    .transpose()?
            };
            let base = cfg
                .io
                .manifest
                .as_ref()
                .and_then(|m| m.parent())
                .unwrap_or(Path::new(""))
                .to_path_buf();
            let load = move |r: &RunRecord| -> std::result::Result<Vec<u8>, String> {
                let p = base.join(&r.path);
                let img = image::open(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                crate::pipeline::ImageRef::from_image(r.id.clone(), &img)
                    .map_err(|e| e.to_string())
                    .map(|i| match i.source {
                        crate::pipeline::ImageSource::Bytes(b) => b.to_vec(),
                        crate::pipeline::ImageSource::Path(_) => unreachable!("built from bytes"),
                    })
            };
            evaluate_paragraph(&records, embedder.as_deref(), &load)
                .map_err(|e| Failure::usage(format!("eval: {e}")))?
        }
    };

    let dir = cli.out.clone().unwrap_or_else(|| archive_dir.to_path_buf());
    prepare_out(&dir)?;
    write_json(&dir, REPORT_JSON, &report)?;
    let csv_text = report
        .to_csv()
        .map_err(|e| io_fail(&dir.join(REPORT_CSV), e))?;
    write_file(&dir, REPORT_CSV, csv_text)?;
    let table = report.table();
    write_file(&dir, REPORT_TXT, &table)?;
    seal(&dir)?;
    let _ = write!(out, "{table}");
    let errors: usize = report.variants.iter().map(|v| v.errors).sum();
    Ok(if errors > 0 {
        EXIT_ITEM_FAILURES
    } else {
        EXIT_OK
    })
}

const VQA_USER_TEMPLATE: &str = "Image Caption: {caption}\nQuestion: {question}";
const NO_CAPTION_USER_TEMPLATE: &str = "Question: {question}";

/// `(file name, contents)` of every exported prompt template.
pub fn prompt_files() -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = TemplatePreset::ALL
        .iter()
        .map(|p| {
            (
                format!("merge_{}.txt", p.name().replace('-', "_")),
                p.template().to_file_string(),
            )
        })
        .collect();
    files.push((
        "vqa.txt".into(),
        sections_to_string(&[
            ("system", VQA_SYSTEM_PROMPT),
            ("user", VQA_USER_TEMPLATE),
            ("assistant_prefix", VQA_ASSISTANT_PREFIX),
        ]),
    ));
    files.push((
        "no_caption.txt".into(),
        sections_to_string(&[
            ("system", NO_CAPTION_SYSTEM_PROMPT),
            ("user", NO_CAPTION_USER_TEMPLATE),
            ("assistant_prefix", VQA_ASSISTANT_PREFIX),
        ]),
    ));
    files
}

fn cmd_export_prompts(dir: &Path, out: &mut dyn Write) -> CmdResult {
    prepare_out(dir)?;
    for (name, text) in prompt_files() {
        write_file(dir, &name, text)?;
        let _ = writeln!(out, "{}", dir.join(&name).display());
    }
    Ok(EXIT_OK)
}

fn cmd_report(dir: &Path, out: &mut dyn Write) -> CmdResult {
    if !dir.join(archive::MANIFEST_FILE).is_file() {
        return Err(Failure::usage(format!(
            "{} is not an archive (no {})",
            dir.display(),
            archive::MANIFEST_FILE
        )));
    }
    let problems =
        archive::verify(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    for name in [SUMMARY_FILE, REPORT_TXT] {
        if let Ok(text) = fs::read_to_string(dir.join(name)) {
            let _ = writeln!(out, "== {name}");
            let _ = write!(out, "{text}");
        }
    }
    if problems.is_empty() {
        let _ = writeln!(out, "archive verified");
        Ok(EXIT_OK)
    } else {
        for p in &problems {
            let _ = writeln!(out, "integrity: {p}");
        }
        Ok(EXIT_ITEM_FAILURES)
    }
}
