// SPDX-License-Identifier: Apache-2.0

//! Stage runner. Stages run in dependency order as barriers; a stage whose
//! input digests and on-disk outputs match its last successful run is
//! skipped. Statuses persist in `status.json` inside the session directory.

use std::collections::BTreeMap;
use std::path::PathBuf;

use gaze_core::canonical::canonical_digest;
use gaze_core::io::{read_json, write_json};
use serde::{Deserialize, Serialize};

use crate::layout::{self, path_digest};
use crate::report::{self, ReportOptions};
use crate::{stages, PipelineConfig, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Project,
    Segment,
    Detect,
    Fuse,
    Export,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Project,
        Stage::Segment,
        Stage::Detect,
        Stage::Fuse,
        Stage::Export,
        Stage::Report,
    ];
    /// Stages that need no human review in between.
    pub const AUTOMATIC: [Stage; 5] = [Stage::Ingest, Stage::Project, Stage::Segment, Stage::Detect, Stage::Fuse];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Project => "project",
            Stage::Segment => "segment",
            Stage::Detect => "detect",
            Stage::Fuse => "fuse",
            Stage::Export => "export",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageStatus {
    pub stage: Stage,
    pub state: StageState,
    pub input_digests: BTreeMap<String, String>,
    pub output_digests: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRun {
    pub status: StageStatus,
    /// False when the stage was skipped as up to date.
    pub executed: bool,
}

fn section<T: Serialize>(v: &T) -> String {
    canonical_digest(v).expect("config serializes")
}

/// `(name, path)` pairs a stage reads, plus digests of its config sections.
fn inputs(cfg: &PipelineConfig, stage: Stage) -> (Vec<(String, PathBuf)>, BTreeMap<String, String>) {
    let s = |rel: &str| (rel.to_string(), cfg.session_dir.join(rel));
    let mut conf = BTreeMap::new();
    let paths = match stage {
        Stage::Ingest => {
            conf.insert("config.input".into(), section(&(&cfg.session_id, cfg.input.recorded_at)));
            let mut v = vec![
                ("input.journal".to_string(), cfg.input.journal.clone()),
                ("input.layout".to_string(), cfg.input.layout.clone()),
                ("input.fisheye".to_string(), cfg.input.fisheye_dir.clone()),
            ];
            v.extend(cfg.input.audio.iter().map(|a| ("input.audio".to_string(), a.clone())));
            v
        }
        Stage::Project => {
            conf.insert("config.projection".into(), section(&cfg.projection));
            vec![
                ("input.layout".to_string(), cfg.input.layout.clone()),
                ("input.fisheye".to_string(), cfg.input.fisheye_dir.clone()),
            ]
        }
        Stage::Segment => {
            conf.insert("config.segmenter".into(), section(&cfg.segmenter));
            conf.insert("config.session_id".into(), section(&cfg.session_id));
            vec![s(layout::VIEWS), s(layout::AUDIO)]
        }
        Stage::Detect => {
            let mut d = cfg.detect.clone();
            d.scripted_fixture = None;
            d.external_dir = None;
            conf.insert("config.detect".into(), section(&d));
            let mut v = vec![s(layout::CLIPS), s(layout::VIEWS), s(layout::AUDIO)];
            v.extend(cfg.detect.scripted_fixture.iter().map(|p| ("input.fixture".to_string(), p.clone())));
            v.extend(cfg.detect.external_dir.iter().map(|p| ("input.external".to_string(), p.clone())));
            v
        }
        Stage::Fuse => {
            conf.insert("config.fusion".into(), section(&cfg.fusion));
            vec![s(layout::EVIDENCE), s(layout::CLIPS), s(layout::AUDIO), s(layout::VIEWS)]
        }
        Stage::Export => {
            conf.insert("config.export".into(), section(&(&cfg.export, &cfg.fusion, &cfg.projection.views)));
            let mut v = vec![
                s(layout::AUDIT),
                s(layout::FINAL_LABELS),
                s(layout::VIEWS),
                s(layout::AUDIO),
                s(layout::LEDGER),
            ];
            v.extend(cfg.detect.scripted_fixture.iter().map(|p| ("input.fixture".to_string(), p.clone())));
            v
        }
        Stage::Report => {
            conf.insert("config.report".into(), section(&(&cfg.seeds, &cfg.domain)));
            vec![
                s(layout::TIMELINE),
                s(layout::SKIPS),
                s(layout::AUDIT),
                s(layout::FINAL_LABELS),
                s(layout::REVIEW_LOG),
            ]
        }
    };
    (paths, conf)
}

fn outputs(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Ingest => &[layout::LEDGER, layout::AUDIO],
        Stage::Project => &[layout::VIEWS],
        Stage::Segment => &[layout::CLIPS],
        Stage::Detect => &[layout::DETECT],
        Stage::Fuse => &[layout::TIMELINE, layout::SKIPS, layout::SUPPRESSED, layout::POLICY],
        Stage::Export => &[layout::DELIVERABLE],
        Stage::Report => &[layout::REPORT_JSON, layout::REPORT_TXT],
    }
}

fn digests(pairs: &[(String, PathBuf)]) -> Result<BTreeMap<String, String>, std::io::Error> {
    pairs.iter().map(|(k, p)| Ok((k.clone(), path_digest(p)?))).collect()
}

fn output_digests(cfg: &PipelineConfig, stage: Stage) -> Result<BTreeMap<String, String>, std::io::Error> {
    let pairs: Vec<(String, PathBuf)> = outputs(stage)
        .iter()
        .map(|r| (r.to_string(), cfg.session_dir.join(r)))
        .collect();
    digests(&pairs)
}

fn load_status(cfg: &PipelineConfig) -> BTreeMap<Stage, StageStatus> {
    read_json::<Vec<StageStatus>>(&cfg.session_dir.join(layout::STATUS))
        .map(|v| v.into_iter().map(|s| (s.stage, s)).collect())
        .unwrap_or_default()
}

fn save_status(cfg: &PipelineConfig, all: &BTreeMap<Stage, StageStatus>) -> Result<(), PipelineError> {
    std::fs::create_dir_all(&cfg.session_dir).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
    let v: Vec<&StageStatus> = all.values().collect();
    write_json(&cfg.session_dir.join(layout::STATUS), &v).map_err(|e| PipelineError::StageFailed {
        stage: "status".into(),
        cause: e.to_string(),
    })
}

fn execute(cfg: &PipelineConfig, stage: Stage, pool: &rayon::ThreadPool) -> anyhow::Result<()> {
    match stage {
        Stage::Ingest => stages::ingest(cfg),
        Stage::Project => stages::project(cfg, pool),
        Stage::Segment => stages::segment(cfg, pool),
        Stage::Detect => stages::detect(cfg, pool),
        Stage::Fuse => stages::fuse(cfg),
        Stage::Export => stages::export(cfg),
        Stage::Report => report::run(cfg, &ReportOptions::from_config(cfg)).map(|_| ()),
    }
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))
}

/// Runs `requested` stages (in dependency order, duplicates ignored).
pub fn run_pipeline(cfg: &PipelineConfig, requested: &[Stage]) -> Result<Vec<StageRun>, PipelineError> {
    cfg.validate()?;
    let pool = thread_pool(cfg.workers)?;
    let mut todo: Vec<Stage> = requested.to_vec();
    todo.sort();
    todo.dedup();
    let mut all = load_status(cfg);
    let mut runs = Vec::new();
    for stage in todo {
        let failed = |cause: String| PipelineError::StageFailed {
            stage: stage.as_str().into(),
            cause,
        };
        let (paths, conf) = inputs(cfg, stage);
        let mut input_digests = digests(&paths).map_err(|e| failed(e.to_string()))?;
        input_digests.extend(conf);
        if let Some(prev) = all.get(&stage) {
            let outs = output_digests(cfg, stage).map_err(|e| failed(e.to_string()))?;
            if prev.state == StageState::Done && prev.input_digests == input_digests && prev.output_digests == outs {
                runs.push(StageRun {
                    status: prev.clone(),
                    executed: false,
                });
                continue;
            }
        }
        let mut status = StageStatus {
            stage,
            state: StageState::Running,
            input_digests,
            output_digests: BTreeMap::new(),
            error: None,
        };
        all.insert(stage, status.clone());
        save_status(cfg, &all)?;
        match execute(cfg, stage, &pool) {
            Ok(()) => {
                status.state = StageState::Done;
                status.output_digests = output_digests(cfg, stage).map_err(|e| failed(e.to_string()))?;
                all.insert(stage, status.clone());
                save_status(cfg, &all)?;
                runs.push(StageRun {
                    status,
                    executed: true,
                });
            }
            Err(e) => {
                let cause = format!("{e:#}");
                status.state = StageState::Failed;
                status.error = Some(cause.clone());
                all.insert(stage, status);
                save_status(cfg, &all)?;
                return Err(failed(cause));
            }
        }
    }
    Ok(runs)
}
