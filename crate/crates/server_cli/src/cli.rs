//! `l2r` command line. Exit codes: 0 success, 1 domain error, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use l2r_core::agents::PromptSet;
use l2r_core::ake::{Enricher, read_seeds};
use l2r_core::config::Config;
use l2r_core::evaluation::{
    evaluate, forced_pass, gold_ratio_experiment, load_dataset, parse_alphas, ratio_csv,
    refusal_success_rate, sweep_alpha, sweep_csv, ForcedCache,
};
use l2r_core::knowledge_store::{ImportMode, Source};
use l2r_core::pipeline::{response_json, Pipeline, Task};

use crate::api::{serve, AppState};
use crate::workspace::{load_config, Overrides, Workspace, CONFIG_FILE};

#[derive(Debug, Parser)]
#[command(name = "l2r", version, about = "Question answering that refuses when its knowledge base cannot support an answer")]
pub struct Cli {
    /// Config file (default: ./l2r.toml when present).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Hard refusal threshold.
    #[arg(long, global = true, value_parser = positive_f64)]
    alpha: Option<f64>,
    /// Number of knowledge entries retrieved per question.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    /// `openai` or `mock:<script.json>`.
    #[arg(long, global = true, value_name = "PROVIDER")]
    provider: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a project directory with config, knowledge base and prompts.
    Init {
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
    /// Manage the knowledge base.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Generate knowledge from seed questions.
    Enrich {
        /// Seed questions, one per line, or a dataset JSONL file.
        #[arg(long)]
        seeds: PathBuf,
        /// Number of questions to generate.
        #[arg(long, short = 'm', default_value_t = 10)]
        count: usize,
        /// Add results directly instead of queueing them for review.
        #[arg(long)]
        auto_accept: bool,
    },
    /// Answer one question and print the response as JSON.
    Ask {
        question: String,
        /// Multiple-choice option; repeat for each option.
        #[arg(long = "choice", short = 'c')]
        choices: Vec<String>,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        /// Bypass both refusal gates (the judgment is still reported).
        #[arg(long)]
        forced: bool,
    },
    /// Evaluate a multiple-choice dataset.
    Eval {
        dataset: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also run a forced pass and report the refusal success rate.
        #[arg(long)]
        success_rate: bool,
    },
    /// Replay forced-mode results over a list of thresholds.
    Sweep {
        dataset: PathBuf,
        #[arg(long, value_parser = alpha_list)]
        alphas: AlphaList,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Reuse a forced-mode cache instead of calling the provider.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Accuracy as a growing share of gold knowledge is made available.
    Ratio {
        dataset: PathBuf,
        #[arg(long, value_parser = alpha_list, default_value = "0,0.25,0.5,0.75,1")]
        ratios: AlphaList,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Start the HTTP API.
    Serve {
        /// Address to bind, overriding the config.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum KbCommand {
    /// Add one fact.
    Add {
        text: String,
        #[arg(long, default_value_t = 1.0, value_parser = unit_f64)]
        confidence: f64,
        /// Human-verified: stored as manual knowledge with confidence 1.0.
        #[arg(long)]
        verified: bool,
    },
    /// Import a KB JSONL file or split a plain-text corpus into facts.
    Import {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "kb")]
        mode: ImportArg,
        /// Confidence for corpus sentences.
        #[arg(long, default_value_t = 1.0, value_parser = unit_f64)]
        confidence: f64,
    },
    /// Write the knowledge base as JSONL.
    Export { file: PathBuf },
    /// Print entries as JSONL.
    List {
        /// Include deleted entries.
        #[arg(long)]
        all: bool,
    },
    SetConfidence {
        id: u64,
        #[arg(value_parser = unit_f64)]
        confidence: f64,
    },
    /// Soft-delete an entry.
    Delete { id: u64 },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Open,
    Mc1,
    Mc2,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Open => Task::Open,
            TaskArg::Mc1 => Task::Mc1,
            TaskArg::Mc2 => Task::Mc2,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ImportArg {
    Kb,
    Corpus,
}

#[derive(Debug, Clone)]
struct AlphaList(Vec<f64>);

fn alpha_list(s: &str) -> Result<AlphaList, String> {
    let v = parse_alphas(s)?;
    if v.is_empty() {
        return Err("expected a comma-separated list of numbers".into());
    }
    Ok(AlphaList(v))
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 => Ok(v),
        _ => Err(format!("expected a number > 0, got '{s}'")),
    }
}

fn unit_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("expected a number in [0, 1], got '{s}'")),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let ov = Overrides {
        alpha: cli.alpha,
        k: cli.k.map(|k| k as usize),
        provider: cli.provider.clone(),
    };
    match cli.command {
        Command::Init { dir } => init(&dir),
        Command::Kb { command } => kb(command, &open(&cli.config, &ov)?),
        Command::Enrich { seeds, count, auto_accept } => {
            let mut ws = open(&cli.config, &ov)?.workspace()?;
            let seeds = read_seeds(&seeds).with_context(|| format!("reading {}", seeds.display()))?;
            let enricher = Enricher::new(ws.gateway()?, ws.prompts.clone(), ws.config.ake.clone());
            let auto = auto_accept || ws.config.ake.auto_accept;
            let job_id = uuid::Uuid::new_v4().to_string();
            let job = enricher.enrich(&mut ws.kb, &job_id, &seeds, count, auto)?;
            ws.job_store().append(&job)?;
            ws.save()?;
            println!(
                "job {} {:?}: {} produced ({} pending review), {} duplicates, {} errors",
                job.job_id,
                job.state,
                job.produced.len(),
                job.pending().count(),
                job.duplicates,
                job.errors.len()
            );
            Ok(())
        }
        Command::Ask { question, choices, task, forced } => {
            let mut ws = open(&cli.config, &ov)?.workspace()?;
            let pipeline = ws.pipeline(ws.gateway()?)?;
            let task = task.map(Task::from).unwrap_or(if choices.is_empty() { Task::Open } else { Task::Mc1 });
            let choices = (!choices.is_empty()).then_some(choices.as_slice());
            let r = if forced {
                pipeline.forced_answer(&question, choices, task)
            } else {
                pipeline.answer_question(&question, choices, task)
            };
            let r = r.map_err(|e| match e.audit_ref() {
                Some(idx) => anyhow::anyhow!("{e} (provider call {idx})"),
                None => e.into(),
            })?;
            println!("{}", serde_json::to_string_pretty(&response_json("ask", &r))?);
            Ok(())
        }
        Command::Eval { dataset, out, success_rate } => {
            let (data, pipeline, parallelism) = eval_setup(&cli.config, &ov, &dataset)?;
            fs::create_dir_all(&out)?;
            let (mut report, lines) = evaluate(&data, &pipeline, parallelism);
            if success_rate {
                let cache = forced_pass(&data, &pipeline, parallelism);
                cache.save(&out.join("forced.jsonl"))?;
                report.success_rate = refusal_success_rate(&report, &cache).rate;
            }
            fs::write(out.join("report.json"), report.to_json())?;
            fs::write(out.join("responses.jsonl"), lines.iter().map(|l| format!("{l}\n")).collect::<String>())?;
            println!(
                "answered {}/{} accuracy {:.4} refused hard {} soft {} errors {}{}",
                report.answered,
                report.total,
                report.accuracy,
                report.refusals_hard,
                report.refusals_soft,
                report.errors,
                report.success_rate.map(|r| format!(" success_rate {r:.4}")).unwrap_or_default()
            );
            Ok(())
        }
        Command::Sweep { dataset, alphas, out, cache } => {
            fs::create_dir_all(&out)?;
            let forced = match cache {
                Some(path) => ForcedCache::load(&path)?,
                None => {
                    let (data, pipeline, parallelism) = eval_setup(&cli.config, &ov, &dataset)?;
                    let c = forced_pass(&data, &pipeline, parallelism);
                    c.save(&out.join("forced.jsonl"))?;
                    c
                }
            };
            let path = out.join("sweep.csv");
            fs::write(&path, sweep_csv(&sweep_alpha(&forced, &alphas.0)))?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Ratio { dataset, ratios, out } => {
            let (data, pipeline, parallelism) = eval_setup(&cli.config, &ov, &dataset)?;
            fs::create_dir_all(&out)?;
            let gateway = pipeline.gateway().clone();
            let prompts = Arc::new(pipeline.prompts().clone());
            let settings = *pipeline.settings();
            let rows = gold_ratio_experiment(
                &data,
                &ratios.0,
                pipeline.index().embedder().clone(),
                |index| Pipeline::new(index, gateway.clone(), prompts.clone(), settings),
                parallelism,
            )?;
            let path = out.join("ratio.csv");
            fs::write(&path, ratio_csv(&rows))?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Serve { bind } => {
            let loaded = open(&cli.config, &ov)?;
            let bind = bind.unwrap_or_else(|| loaded.config.server.bind.clone());
            let ws = loaded.workspace()?;
            let gateway = ws.gateway()?;
            let state = AppState::new(ws, gateway)?;
            let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
            let rt = tokio::runtime::Runtime::new()?;
            let result = rt.block_on(serve(state.clone(), &bind));
            drop(rt);
            // Provider clients are dropped outside the runtime.
            drop(state);
            result
        }
    }
}

/// Config resolved from flags, before anything else is loaded.
struct Loaded {
    config: Config,
}

fn open(path: &Option<PathBuf>, ov: &Overrides) -> Result<Loaded> {
    Ok(Loaded {
        config: load_config(path.as_deref(), ov)?,
    })
}

impl Loaded {
    fn workspace(&self) -> Result<Workspace> {
        Workspace::open(self.config.clone())
    }
}

fn eval_setup(config: &Option<PathBuf>, ov: &Overrides, dataset: &Path) -> Result<(Vec<l2r_core::evaluation::DatasetRecord>, Pipeline, usize)> {
    let data = load_dataset(dataset).with_context(|| format!("loading {}", dataset.display()))?;
    let mut ws = open(config, ov)?.workspace()?;
    let pipeline = ws.pipeline(ws.gateway()?)?;
    Ok((data, pipeline, ws.config.answer.parallelism))
}

fn init(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let config_path = dir.join(CONFIG_FILE);
    if !config_path.exists() {
        fs::write(&config_path, Config::default().to_toml())?;
    }
    let config = Config::load(&config_path)?;
    for sub in [&config.paths.kb_dir, &config.paths.jobs_dir] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let prompts = dir.join(&config.paths.prompts_dir);
    if !prompts.exists() {
        PromptSet::default().write_dir(&prompts)?;
    }
    println!("initialized {}", dir.display());
    Ok(())
}

fn kb(command: KbCommand, loaded: &Loaded) -> Result<()> {
    let mut ws = loaded.workspace()?;
    match command {
        KbCommand::Add { text, confidence, verified } => {
            let entry = ws.kb.upsert_entry(&text, confidence, Source::Manual, verified)?.clone();
            ws.save()?;
            println!("{}", serde_json::to_string(&entry)?);
        }
        KbCommand::Import { file, mode, confidence } => {
            let mode = match mode {
                ImportArg::Kb => ImportMode::KbJsonl,
                ImportArg::Corpus => ImportMode::CorpusText { confidence },
            };
            let n = ws.kb.import(&file, mode).with_context(|| format!("importing {}", file.display()))?;
            ws.save()?;
            println!("{n}");
        }
        KbCommand::Export { file } => {
            let n = ws.kb.export(&file)?;
            println!("{n}");
        }
        KbCommand::List { all } => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for e in ws.kb.entries().iter().filter(|e| all || !e.is_tombstoned()) {
                writeln!(out, "{}", serde_json::to_string(e)?)?;
            }
        }
        KbCommand::SetConfidence { id, confidence } => {
            let entry = ws.kb.set_confidence(id, confidence)?.clone();
            ws.save()?;
            println!("{}", serde_json::to_string(&entry)?);
        }
        KbCommand::Delete { id } => {
            let entry = ws.kb.delete(id)?.clone();
            ws.save()?;
            println!("{}", serde_json::to_string(&entry)?);
        }
    }
    Ok(())
}
