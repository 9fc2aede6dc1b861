// SPDX-License-Identifier: Apache-2.0

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gaze::autoreview::auto_review;
use gaze::report::{self, ReportOptions};
use gaze::server::{serve, AppState};
use gaze::synth::{generate, SynthParams};
use gaze::validate::validate_artifacts;
use gaze::{run_pipeline, PipelineConfig, Stage};
use gaze_core::clock::SystemClock;

#[derive(Parser)]
#[command(name = "gaze", version, about = "Review-by-exception pipeline for 360° capture sessions")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,
    /// Worker threads for per-clip stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the session working directory from the config.
    #[arg(long, global = true)]
    session: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    Ingest,
    Project,
    Segment,
    Detect,
    Fuse,
    /// Serve the review API for the configured session.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    Export,
    Report {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Per-feature savings as `name=fraction`, repeatable.
        #[arg(long = "factor")]
        factors: Vec<String>,
        /// Further processed session directories to pool.
        #[arg(long = "with-session")]
        with_sessions: Vec<PathBuf>,
    },
    /// Check every artifact in the session directory.
    Validate,
    /// Run stages in order (all automatic stages by default).
    Run {
        #[arg(long, value_enum)]
        stages: Vec<Stage>,
        /// Accept all suggestions headlessly, then export and report.
        #[arg(long)]
        auto_review: bool,
    },
    /// Headless review that accepts every suggestion.
    Review {
        #[arg(long)]
        auto: bool,
    },
    /// Write a synthetic session (input files plus config.json) into a directory.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 180.0)]
        duration: f64,
        #[arg(long, default_value_t = 60.0)]
        idle: f64,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long, default_value = "synth_0001")]
        session_id: String,
    },
}

fn load(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = &cli.session {
        cfg.session_dir = s.clone();
    }
    Ok(cfg)
}

fn stage(cli: &Cli, s: Stage) -> Result<()> {
    let cfg = load(cli)?;
    for r in run_pipeline(&cfg, &[s])? {
        println!(
            "{}: {}",
            r.status.stage.as_str(),
            if r.executed { "done" } else { "up to date" }
        );
    }
    Ok(())
}

fn parse_factor(s: &str) -> Result<(String, f64)> {
    let (name, f) = s.split_once('=').context("factor must be name=fraction")?;
    Ok((name.to_string(), f.parse().with_context(|| format!("bad fraction in {s:?}"))?))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.cmd {
        Cmd::Ingest => stage(&cli, Stage::Ingest)?,
        Cmd::Project => stage(&cli, Stage::Project)?,
        Cmd::Segment => stage(&cli, Stage::Segment)?,
        Cmd::Detect => stage(&cli, Stage::Detect)?,
        Cmd::Fuse => stage(&cli, Stage::Fuse)?,
        Cmd::Export => stage(&cli, Stage::Export)?,
        Cmd::Serve { addr } => {
            let cfg = load(&cli)?;
            let state = Arc::new(AppState::new());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                state
                    .add_session(
                        &cfg.session_id,
                        cfg.session_dir.clone(),
                        Arc::new(SystemClock),
                        cfg.qa_fraction,
                        cfg.seeds.qa,
                    )
                    .await?;
                eprintln!("serving {} on http://{addr}", cfg.session_id);
                serve(*addr, state).await
            })?;
        }
        Cmd::Report {
            seed,
            resamples,
            level,
            factors,
            with_sessions,
        } => {
            let cfg = load(&cli)?;
            let mut opts = ReportOptions::from_config(&cfg);
            if let Some(s) = seed {
                opts.seed = *s;
            }
            opts.resamples = *resamples;
            opts.level = *level;
            if !factors.is_empty() {
                opts.factors = factors.iter().map(|f| parse_factor(f)).collect::<Result<_>>()?;
            }
            opts.extra_sessions = with_sessions.clone();
            let batch = report::run(&cfg, &opts)?;
            print!("{}", gaze_core::metrics::report::render_batch(&batch));
        }
        Cmd::Validate => {
            let cfg = load(&cli)?;
            let r = validate_artifacts(&cfg.session_dir);
            for v in &r.violations {
                println!("{}:{}: {}", v.file, v.line, v.message);
            }
            if !r.is_ok() {
                return Ok(ExitCode::from(1));
            }
            println!("ok");
        }
        Cmd::Run { stages, auto_review: auto } => {
            let cfg = load(&cli)?;
            let wanted: Vec<Stage> = if stages.is_empty() {
                Stage::AUTOMATIC.to_vec()
            } else {
                stages.clone()
            };
            for r in run_pipeline(&cfg, &wanted)? {
                println!("{}: {}", r.status.stage.as_str(), if r.executed { "done" } else { "up to date" });
            }
            if *auto {
                let s = auto_review(&cfg)?;
                println!("review: {} accepted, {} QA sampled", s.accepted, s.qa_sampled);
                for r in run_pipeline(&cfg, &[Stage::Export, Stage::Report])? {
                    println!("{}: {}", r.status.stage.as_str(), if r.executed { "done" } else { "up to date" });
                }
            }
        }
        Cmd::Review { auto } => {
            if !auto {
                bail!("interactive review goes through `gaze serve`; pass --auto for headless acceptance");
            }
            let cfg = load(&cli)?;
            let s = auto_review(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Cmd::Synth {
            dir,
            duration,
            idle,
            seed,
            session_id,
        } => {
            let p = SynthParams {
                session_id: session_id.clone(),
                duration_s: *duration,
                idle_s: *idle,
                seed: *seed,
                ..Default::default()
            };
            let t = generate(dir, &p)?;
            println!("{}", t.config_path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
