//! Batch command line. Exit codes: 0 success, 1 pipeline error, 2 usage.

use std::ffi::OsString;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use slideforge::deck::{deck_from_json, deck_to_json};
use slideforge::kb::{ingest_document, DocKind, KnowledgeBase, PdfExtractor, SplitterConfig};
use slideforge::textbook::{format_lint, CustomizationSpec, Difficulty, Style};

use crate::api::{self, AppState};
use crate::config::Settings;
use crate::jobs::JobStore;
use crate::pipeline::{Runner, Services};
use crate::upload::{UploadKind, UploadPolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PIPELINE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "slideforge", version, about = "Turn slide decks into textbooks")]
pub struct Cli {
    /// TOML or JSON settings file; its keys override SLIDEFORGE_* variables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StyleArg {
    Academic,
    Simplified,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DifficultyArg {
    Introductory,
    Intermediate,
    Advanced,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract slide text, notes, images and OCR into deck JSON.
    Extract {
        file: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Manage the local knowledge base.
    Kb {
        #[command(subcommand)]
        action: KbCommand,
    },
    /// Generate a textbook from a deck file or deck JSON.
    Generate {
        input: PathBuf,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long, default_value = "en")]
        language: String,
        #[arg(long, value_enum, default_value = "academic")]
        style: StyleArg,
        #[arg(long, value_enum, default_value = "introductory")]
        difficulty: DifficultyArg,
        #[arg(long, default_value = "gpt-4o")]
        model: String,
        /// Learning objective; repeatable.
        #[arg(long = "objective")]
        objectives: Vec<String>,
        #[arg(long)]
        no_exercises: bool,
        #[arg(short, long)]
        output: PathBuf,
        /// Fixed generation timestamp, for reproducible output.
        #[arg(long)]
        timestamp: Option<String>,
    },
    /// Run the REST service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        workdir: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Chunk, embed and index documents (.txt, .md, .pdf).
    Add {
        #[arg(required = true)]
        docs: Vec<PathBuf>,
        #[arg(long)]
        kb: PathBuf,
        /// Title stored with the chunks; defaults to the file stem.
        #[arg(long)]
        title: Option<String>,
        #[arg(long, default_value_t = slideforge::kb::DEFAULT_CHUNK_SIZE)]
        chunk_size: usize,
        #[arg(long, default_value_t = slideforge::kb::DEFAULT_OVERLAP)]
        overlap: usize,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(message) => {
            eprintln!("error: {message}");
            EXIT_PIPELINE
        }
    }
}

fn execute(cli: Cli) -> Result<(), String> {
    let mut settings = Settings::load(cli.config.as_deref()).map_err(|e| e.to_string())?;
    match cli.command {
        Command::Extract { file, output } => extract(&settings, &file, &output),
        Command::Kb {
            action:
                KbCommand::Add {
                    docs,
                    kb,
                    title,
                    chunk_size,
                    overlap,
                },
        } => kb_add(&settings, &docs, &kb, title.as_deref(), chunk_size, overlap),
        Command::Generate {
            input,
            kb,
            language,
            style,
            difficulty,
            model,
            objectives,
            no_exercises,
            output,
            timestamp,
        } => {
            if kb.is_some() {
                settings.kb_dir = kb;
            }
            let spec = CustomizationSpec {
                output_language: language,
                style: match style {
                    StyleArg::Academic => Style::Academic,
                    StyleArg::Simplified => Style::Simplified,
                },
                difficulty: match difficulty {
                    DifficultyArg::Introductory => Difficulty::Introductory,
                    DifficultyArg::Intermediate => Difficulty::Intermediate,
                    DifficultyArg::Advanced => Difficulty::Advanced,
                },
                objectives,
                model_id: model,
                include_exercises: !no_exercises,
            };
            generate(&settings, &input, spec, &output, timestamp)
        }
        Command::Serve {
            port,
            workdir,
            static_dir,
        } => {
            if let Some(port) = port {
                settings.port = port;
            }
            if let Some(dir) = workdir {
                settings.workdir = dir;
            }
            if static_dir.is_some() {
                settings.static_dir = static_dir;
            }
            serve(settings)
        }
    }
}

fn media_name(output: &Path) -> String {
    let stem = output
        .file_stem()
        .map_or("deck".into(), |s| s.to_string_lossy().into_owned());
    format!("{stem}_media")
}

fn read_deck_file(
    settings: &Settings,
    services: &Services,
    file: &Path,
    base: &Path,
    media: &str,
) -> Result<slideforge::deck::DeckExtract, String> {
    let bytes = fs::read(file).map_err(|e| format!("{}: {e}", file.display()))?;
    let name = file
        .file_name()
        .map_or_else(|| file.display().to_string(), |n| n.to_string_lossy().into_owned());
    let policy = UploadPolicy::with_max_bytes(settings.max_upload_bytes);
    let kind = policy
        .check(&name, &bytes, services.legacy.is_some())
        .map_err(|e| e.to_string())?;
    let bytes = match (kind, &services.legacy) {
        (UploadKind::LegacyPpt, Some(converter)) => converter.convert(&bytes).map_err(|e| e.to_string())?,
        _ => bytes,
    };
    let (deck, _, warnings) = services.extract(&bytes, &name, base, media)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(deck)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn extract(settings: &Settings, file: &Path, output: &Path) -> Result<(), String> {
    let services = Services::from_settings(settings)?;
    let deck = read_deck_file(settings, &services, file, &parent_dir(output), &media_name(output))?;
    fs::write(output, deck_to_json(&deck)).map_err(|e| format!("{}: {e}", output.display()))?;
    eprintln!("extracted {} slides to {}", deck.slide_count, output.display());
    Ok(())
}

fn kb_add(
    settings: &Settings,
    docs: &[PathBuf],
    kb_dir: &Path,
    title: Option<&str>,
    chunk_size: usize,
    overlap: usize,
) -> Result<(), String> {
    let services = Services::from_settings(&Settings {
        kb_dir: None,
        ..settings.clone()
    })?;
    let splitter = SplitterConfig::new(chunk_size, overlap).map_err(|e| e.to_string())?;
    let pdf = settings.pdf_cmd.as_ref().map(PdfExtractor::new);
    fs::create_dir_all(kb_dir).map_err(|e| format!("{}: {e}", kb_dir.display()))?;
    let mut kb = KnowledgeBase::open_or_create(kb_dir, services.embed.dim()).map_err(|e| e.to_string())?;
    for path in docs {
        let kind = DocKind::from_path(path)
            .ok_or_else(|| format!("{}: unsupported document type (use .txt, .md or .pdf)", path.display()))?;
        let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let doc_title = title.map_or_else(
            || {
                path.file_stem()
                    .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
            },
            str::to_string,
        );
        let origin = path.display().to_string();
        let doc = ingest_document(&bytes, kind, &doc_title, &origin, pdf.as_ref()).map_err(|e| e.to_string())?;
        let added = kb
            .add_document(&doc, &splitter, services.embed.as_ref())
            .map_err(|e| e.to_string())?;
        eprintln!("{origin}: added {added} chunks");
    }
    kb.save().map_err(|e| e.to_string())?;
    eprintln!("knowledge base now holds {} chunks", kb.index().len());
    Ok(())
}

fn generate(
    settings: &Settings,
    input: &Path,
    spec: CustomizationSpec,
    output: &Path,
    timestamp: Option<String>,
) -> Result<(), String> {
    let mut services = Services::from_settings(settings)?;
    if let Some(ts) = timestamp {
        let at = chrono::DateTime::parse_from_rfc3339(&ts)
            .map_err(|e| format!("--timestamp {ts:?}: {e}"))?
            .with_timezone(&chrono::Utc);
        services.clock = crate::fixed_clock(at);
    }
    spec.validate(|m| services.registry.contains(m))
        .map_err(|e| e.to_string())?;
    let is_json = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let deck = if is_json {
        let text = fs::read_to_string(input).map_err(|e| format!("{}: {e}", input.display()))?;
        deck_from_json(&text).map_err(|e| e.to_string())?
    } else {
        read_deck_file(settings, &services, input, &parent_dir(output), &media_name(output))?
    };
    let book = services
        .generator()
        .generate(&deck, &spec, &services.timestamp())
        .map_err(|e| e.to_string())?;
    for w in &book.warnings {
        eprintln!("warning: {w}");
    }
    fs::write(output, &book.markdown).map_err(|e| format!("{}: {e}", output.display()))?;
    let issues = format_lint(&book.markdown);
    for issue in &issues {
        eprintln!("lint: {issue:?}");
    }
    eprintln!(
        "wrote {} chapters to {} ({} lint issues)",
        book.plan.chapters.len(),
        output.display(),
        issues.len()
    );
    Ok(())
}

fn serve(settings: Settings) -> Result<(), String> {
    let services = Arc::new(Services::from_settings(&settings)?);
    fs::create_dir_all(&settings.workdir).map_err(|e| format!("{}: {e}", settings.workdir.display()))?;
    let store = Arc::new(JobStore::new(&settings.workdir, services.clock.clone()));
    let restored = store.restore();
    if restored > 0 {
        tracing::info!(restored, "restored job journals");
    }
    let state = AppState {
        runner: Runner::new(services, store, settings.job_workers),
        policy: UploadPolicy::with_max_bytes(settings.max_upload_bytes),
        static_dir: settings.static_dir.clone(),
    };
    let ip: IpAddr = settings
        .bind
        .parse()
        .map_err(|e| format!("bind address {:?}: {e}", settings.bind))?;
    let addr = SocketAddr::new(ip, settings.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime
        .block_on(api::serve(
            state,
            addr,
            std::time::Duration::from_secs(settings.cleanup_interval_secs),
            chrono::Duration::hours(settings.job_max_age_hours as i64),
        ))
        .map_err(|e| e.to_string())
}
