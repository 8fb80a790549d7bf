//! Command-line driver.
//!
//! Every subcommand is a thin wrapper over [`crate::pipeline`]; exit code 0 on
//! success, 1 on a domain error, 2 on a usage error.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::backend::{self, BackendDescriptor, MockBackend};
use crate::curate::{CurateConfig, DEFAULT_MAX_DEPTH, DEFAULT_RETRIES};
use crate::error::{Error, Result};
use crate::json;
use crate::layout::{LayoutOptions, DEFAULT_CANVAS_WIDTH};
use crate::model::{ElementLibrary, PresentMode, ScoringConfig, SceneDocument, SelectionMode};
use crate::oracle;
use crate::pipeline;
use crate::preprocess::{PrepareOptions, DEFAULT_CONFIDENCE};
use crate::service::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "collage-forge", version, about = "Story-driven cutout curation for collage storytelling")]
pub struct Cli {
    /// Print results and diagnostics as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract labelled cutouts from a photo directory into a library.
    Prepare(PrepareArgs),
    /// Select, classify, cluster and score library elements for a story.
    Curate(CurateArgs),
    /// Lay out a curated session as a presentation grid.
    Layout(LayoutArgs),
    /// Write assets.json, scene.json, preview.png and cutouts for a session.
    Export(ExportArgs),
    /// Recompute stored scores by brute force and list differences.
    Oracle(OracleArgs),
    /// Run full, keyword-only and uniform-present variants side by side.
    Compare(CompareArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Serve the mock model backend over HTTP.
    MockBackend(MockBackendArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    #[value(alias = "keyword_only")]
    KeywordOnly,
}

impl From<ModeArg> for SelectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => SelectionMode::Full,
            ModeArg::KeywordOnly => SelectionMode::KeywordOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresentArg {
    Sized,
    Uniform,
}

impl From<PresentArg> for PresentMode {
    fn from(p: PresentArg) -> Self {
        match p {
            PresentArg::Sized => PresentMode::Sized,
            PresentArg::Uniform => PresentMode::Uniform,
        }
    }
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// `mock` or the base URL of a model backend.
    #[arg(long)]
    pub backend: Option<String>,
    /// Mock backend seed (also read from COLLAGE_MOCK_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Remote backend request timeout in seconds (also COLLAGE_BACKEND_TIMEOUT_S).
    #[arg(long)]
    pub timeout: Option<f64>,
}

impl BackendArgs {
    fn descriptor(&self) -> Result<Option<BackendDescriptor>> {
        self.backend
            .as_deref()
            .map(|b| BackendDescriptor::parse(b, self.seed, self.timeout))
            .transpose()
    }
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory of PNG/JPEG photos.
    #[arg(long)]
    pub collection: PathBuf,
    /// Library directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// `mock` or the base URL of a model backend.
    #[arg(long, default_value = "mock")]
    pub backend: String,
    /// Mock backend seed (also read from COLLAGE_MOCK_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimum detection confidence kept as an element.
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    pub confidence: f64,
    /// Remote backend request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Library directory written by `prepare`.
    #[arg(long)]
    pub library: PathBuf,
    /// Story text, `@path` to read it from a file, or `-` for stdin.
    #[arg(long)]
    pub story: String,
    /// Selection mode.
    #[arg(long, value_enum, default_value = "full")]
    pub mode: ModeArg,
    /// Score weights for diversity, consistency and resolution.
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<[f64; 3]>,
    /// Deepest cluster nesting accepted from the model.
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    pub max_depth: usize,
    /// Re-asks allowed per model stage after a malformed reply.
    #[arg(long, default_value_t = DEFAULT_RETRIES)]
    pub retries: u32,
    /// Skip character rig parsing.
    #[arg(long)]
    pub no_rigs: bool,
    /// Session directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Backend override; defaults to the backend recorded with the library.
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct LayoutFlags {
    /// Tile sizing.
    #[arg(long, value_enum, default_value = "sized")]
    pub present: PresentArg,
    /// Canvas width in pixels.
    #[arg(long, default_value_t = DEFAULT_CANVAS_WIDTH)]
    pub canvas_width: f64,
    /// Gap between tiles in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub gap: f64,
    /// Shuffle seed for uniform presentation.
    #[arg(long = "layout-seed", default_value_t = 0)]
    pub layout_seed: u64,
}

impl LayoutFlags {
    fn options(&self) -> LayoutOptions {
        LayoutOptions {
            canvas_width: self.canvas_width,
            gap: self.gap,
            present: self.present.into(),
            seed: self.layout_seed,
            ..LayoutOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    /// Session directory written by `curate`.
    #[arg(long)]
    pub session: PathBuf,
    #[command(flatten)]
    pub layout: LayoutFlags,
    /// File to write the presentation to.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Session directory written by `curate`.
    #[arg(long)]
    pub session: PathBuf,
    /// Scene document to export; defaults to the session's saved scene or
    /// the presentation grid.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[command(flatten)]
    pub layout: LayoutFlags,
    /// Bundle directory to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Session directory written by `curate`.
    #[arg(long)]
    pub session: PathBuf,
    /// Largest accepted absolute difference.
    #[arg(long, default_value_t = oracle::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Library directory written by `prepare`.
    #[arg(long)]
    pub library: PathBuf,
    /// Story text, `@path` to read it from a file, or `-` for stdin.
    #[arg(long)]
    pub story: String,
    /// Score weights for diversity, consistency and resolution.
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<[f64; 3]>,
    #[command(flatten)]
    pub layout: LayoutFlags,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Backend override; defaults to the backend recorded with the library.
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on.
    #[arg(long, env = service::ENV_BIND_ADDR, default_value = service::DEFAULT_BIND_ADDR)]
    pub bind: String,
    /// Root of the on-disk store.
    #[arg(long, env = service::ENV_DATA_DIR, default_value = "data")]
    pub data_dir: PathBuf,
    /// Concurrent prepare jobs.
    #[arg(long, default_value_t = service::DEFAULT_PREPARE_WORKERS)]
    pub prepare_workers: usize,
    /// Concurrent curation jobs; defaults to the CPU count.
    #[arg(long)]
    pub curate_workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MockBackendArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8700")]
    pub bind: String,
    /// Mock seed.
    #[arg(long, default_value_t = backend::DEFAULT_MOCK_SEED)]
    pub seed: u64,
    /// Directory for uploaded images and generated cutouts.
    #[arg(long, default_value = "mock-scratch")]
    pub scratch: PathBuf,
}

fn parse_weights(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated weights, got {s:?}"));
    }
    let mut w = [0.0; 3];
    for (slot, p) in w.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("weight {p:?} is not a number"))?;
    }
    Ok(w)
}

/// Resolves `text`, `@file` or `-` to the story text.
pub fn read_story(arg: &str) -> Result<String> {
    if arg == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| Error::io("<stdin>", e))?;
        Ok(s)
    } else if let Some(path) = arg.strip_prefix('@') {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
    } else {
        Ok(arg.to_string())
    }
}

fn scoring(weights: Option<[f64; 3]>) -> ScoringConfig {
    match weights {
        Some([a, b, c]) => ScoringConfig::with_weights(a, b, c),
        None => ScoringConfig::default(),
    }
}

fn backend_for(library: &Path, args: &BackendArgs) -> Result<BackendDescriptor> {
    match args.descriptor()? {
        Some(d) => Ok(d),
        None => pipeline::library_backend(library),
    }
}

/// What a command prints on success.
struct Outcome {
    text: String,
    value: serde_json::Value,
    /// Overrides the exit code for commands that report a failed check.
    code: u8,
}

impl Outcome {
    fn ok(text: String, value: serde_json::Value) -> Self {
        Outcome { text, value, code: 0 }
    }
}

fn run_prepare(a: &PrepareArgs) -> Result<Outcome> {
    let descriptor = BackendDescriptor::parse(&a.backend, a.seed, a.timeout)?;
    let options = PrepareOptions {
        confidence: a.confidence,
    };
    let out = pipeline::prepare(&a.collection, &a.out, &descriptor, &options)?;
    let failed: Vec<&str> = out.report.failed_images().map(|r| r.image_id.as_str()).collect();
    let text = format!(
        "library {}: {} elements, {} labels, {} of {} images failed -> {}",
        out.library.library_id,
        out.library.elements.len(),
        out.library.label_index.len(),
        failed.len(),
        out.report.images.len(),
        a.out.display()
    );
    Ok(Outcome::ok(
        text,
        json!({
            "library_id": out.library.library_id,
            "elements": out.library.elements.len(),
            "labels": out.library.label_index.len(),
            "failed_images": failed,
            "out": a.out,
        }),
    ))
}

fn run_curate(a: &CurateArgs) -> Result<Outcome> {
    let story = read_story(&a.story)?;
    let descriptor = backend_for(&a.library, &a.backend)?;
    let backend = descriptor.connect()?;
    let config = CurateConfig {
        mode: a.mode.into(),
        scoring: scoring(a.weights),
        max_depth: a.max_depth,
        retries: a.retries,
        parse_characters: !a.no_rigs,
        ..CurateConfig::default()
    };
    let s = pipeline::curate_into(&a.library, &a.out, &story, backend.as_ref(), &config)?;
    for w in &s.warnings {
        log::warn!("{w}");
    }
    let text = format!(
        "session {}: central [{}], related [{}], {} elements scored, {} suppressed, {} model calls{} -> {}",
        s.session_id,
        s.selection.central.join(", "),
        s.selection.related.join(", "),
        s.hierarchy.scores.len(),
        s.hierarchy.suppressed.len(),
        s.prompt_attempts,
        if s.insufficient_assets { ", insufficient assets" } else { "" },
        a.out.display()
    );
    Ok(Outcome::ok(
        text,
        json!({
            "session_id": s.session_id,
            "selection": s.selection,
            "scored": s.hierarchy.scores.len(),
            "suppressed": s.hierarchy.suppressed,
            "prompt_attempts": s.prompt_attempts,
            "insufficient_assets": s.insufficient_assets,
            "warnings": s.warnings,
            "out": a.out,
        }),
    ))
}

fn run_layout(a: &LayoutArgs) -> Result<Outcome> {
    let (session, library) = pipeline::open_session(&a.session)?;
    let p = pipeline::present(&session, &library, &a.layout.options())?;
    json::write_file(&a.out, &p)?;
    Ok(Outcome::ok(
        format!(
            "{} tiles, content height {:.1} -> {}",
            p.layout.tiles.len(),
            p.layout.content_height,
            a.out.display()
        ),
        json!({
            "tiles": p.layout.tiles.len(),
            "content_height": p.layout.content_height,
            "warnings": p.layout.warnings,
            "out": a.out,
        }),
    ))
}

fn run_export(a: &ExportArgs) -> Result<Outcome> {
    let scene: Option<SceneDocument> = a.scene.as_deref().map(json::read_file).transpose()?;
    let bundle = pipeline::export_session(&a.session, scene.as_ref(), &a.layout.options(), &a.out)?;
    Ok(Outcome::ok(
        format!("exported {} cutout files -> {}", bundle.files_copied, a.out.display()),
        serde_json::to_value(&bundle).unwrap_or_default(),
    ))
}

fn run_oracle(a: &OracleArgs) -> Result<Outcome> {
    let (session, library) = pipeline::open_session(&a.session)?;
    let report = oracle::check_session(&session, &library, a.tolerance)?;
    let mut text = format!(
        "{} records checked, {} diffs, max |diff| {:.3e}",
        report.checked,
        report.diffs.len(),
        report.max_abs_diff
    );
    for d in &report.diffs {
        text.push_str(&format!(
            "\n  {} {}: stored {} recomputed {}",
            d.element_id, d.field, d.stored, d.recomputed
        ));
    }
    let code = if report.is_clean() { 0 } else { 1 };
    Ok(Outcome {
        text,
        value: serde_json::to_value(&report).unwrap_or_default(),
        code,
    })
}

fn fmt_stats(s: &Option<pipeline::Stats>) -> String {
    match s {
        Some(s) => format!("{:.3}/{:.3}/{:.3}", s.min, s.mean, s.max),
        None => "-".into(),
    }
}

fn run_compare(a: &CompareArgs) -> Result<Outcome> {
    let story = read_story(&a.story)?;
    let library = ElementLibrary::load(&a.library)?;
    let backend = backend_for(&a.library, &a.backend)?.connect()?;
    let config = CurateConfig {
        scoring: scoring(a.weights),
        ..CurateConfig::default()
    };
    let report = pipeline::compare(&library, &story, backend.as_ref(), &config, &a.layout.options())?;
    if let Some(out) = &a.out {
        json::write_file(out, &report)?;
    }
    let mut text = format!("{:<14}{:>8}{:>8}  {:<44}{:<24}{}", "variant", "central", "related", "elements", "s_total min/mean/max", "height min/mean/max");
    for v in &report.variants {
        let counts: Vec<String> = v.elements.iter().map(|(k, n)| format!("{k}={n}")).collect();
        text.push_str(&format!(
            "\n{:<14}{:>8}{:>8}  {:<44}{:<24}{}",
            v.name,
            v.central.len(),
            v.related.len(),
            counts.join(" "),
            fmt_stats(&v.s_total),
            fmt_stats(&v.height)
        ));
    }
    Ok(Outcome::ok(text, serde_json::to_value(&report).unwrap_or_default()))
}

fn run_serve(a: &ServeArgs) -> Result<Outcome> {
    let config = ServiceConfig {
        data_dir: a.data_dir.clone(),
        bind: a.bind.clone(),
        backend: BackendDescriptor::from_env(),
        prepare_workers: a.prepare_workers.max(1),
        curate_workers: a.curate_workers.unwrap_or_else(service::default_curate_workers).max(1),
    };
    runtime()?.block_on(service::serve(config))?;
    Ok(Outcome::ok("service stopped".into(), json!({})))
}

fn run_mock_backend(a: &MockBackendArgs) -> Result<Outcome> {
    std::fs::create_dir_all(&a.scratch).map_err(|e| Error::io(&a.scratch, e))?;
    let router = backend::http::router(std::sync::Arc::new(MockBackend::new(a.seed)), a.scratch.clone());
    let bind = a.bind.clone();
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| Error::io(&bind, e))?;
        log::info!("mock backend listening on {bind}");
        axum::serve(listener, router)
            .with_graceful_shutdown(service::shutdown_signal())
            .await
            .map_err(|e| Error::io(&bind, e))
    })?;
    Ok(Outcome::ok("mock backend stopped".into(), json!({})))
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("<runtime>", e))
}

/// Runs one parsed command.
pub fn execute(cli: &Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Prepare(a) => run_prepare(a),
        Command::Curate(a) => run_curate(a),
        Command::Layout(a) => run_layout(a),
        Command::Export(a) => run_export(a),
        Command::Oracle(a) => run_oracle(a),
        Command::Compare(a) => run_compare(a),
        Command::Serve(a) => run_serve(a),
        Command::MockBackend(a) => run_mock_backend(a),
    };
    match result {
        Ok(o) => {
            if cli.json {
                println!("{}", o.value);
            } else {
                println!("{}", o.text);
            }
            ExitCode::from(o.code)
        }
        Err(e) => {
            report_error(&e, cli.json);
            ExitCode::from(1)
        }
    }
}

fn report_error(e: &Error, as_json: bool) {
    if as_json {
        let mut v = json!({ "error": e.to_string() });
        if let Some(stage) = e.stage() {
            v["stage"] = json!(stage.to_string());
        }
        if let Error::Parse(p) = e {
            v["file"] = json!(p.file);
            v["field"] = json!(p.field);
        }
        eprintln!("{v}");
    } else {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(e);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
    }
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    execute(&cli)
}

/// Flags of every subcommand lacking help text; empty when `--help` is
/// complete.
pub fn undocumented_flags() -> Vec<String> {
    use clap::CommandFactory;
    let cmd = Cli::command();
    let mut missing = Vec::new();
    for sub in cmd.get_subcommands() {
        for arg in sub.get_arguments() {
            let builtin = matches!(arg.get_id().as_str(), "help" | "version");
            if !builtin && arg.get_help().is_none() {
                missing.push(format!("{} --{}", sub.get_name(), arg.get_id()));
            }
        }
    }
    missing
}
