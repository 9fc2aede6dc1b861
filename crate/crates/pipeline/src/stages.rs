// SPDX-License-Identifier: Apache-2.0

//! Stage bodies. Each reads its inputs from the session directory (or the
//! configured input paths) and writes its outputs there; clip-level work is
//! spread over the supplied rayon pool and merged in a fixed order.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use gaze_core::clock::{Clock, SteppingClock, SystemClock};
use gaze_core::detectors::audio::ClapAnchor;
use gaze_core::detectors::scripted::{face_age_records, person_track_items, replay_person_detections, replay_transcript};
use gaze_core::detectors::{
    clip_overlaps, detect_claps, finalize_items, motion::detect_motion, pii_items, run_scripted_detector, run_tracker,
    scan_pii, EvidenceClass, EvidenceItem, ScriptedFixture, SuggestedAction, Track,
};
use gaze_core::export::{export_session, verify_no_unredacted, ExportRequest, ProvenanceBundle};
use gaze_core::fusion::{build_timeline, link_reentries, REENTRY_MIN_COSINE, REENTRY_WINDOW_S};
use gaze_core::ingest::{Ingestor, MediaKind, SessionJournal, SessionLedger};
use gaze_core::io::{atomic_write, read_json, read_jsonl, write_json, write_jsonl};
use gaze_core::media::{self, FrameDir, FrameIndexEntry, PcmAudio};
use gaze_core::projection::{dewarp_fisheye_to_erp, render_rectilinear_view, FisheyeLayout, TimedFrame, View};
use gaze_core::review::audit::verify_jsonl;
use gaze_core::review::{AuditEvent, FinalLabel};
use gaze_core::segmenter::{
    clip_id, compute_black_ratio, compute_loudness, compute_motion_energy, plan_windows, ClipRecord, Descriptors, Lens,
};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde_json::json;

use crate::layout::{self, replace_dir};
use crate::PipelineConfig;

pub const SOFTWARE_BUILD: &str = concat!("gaze ", env!("CARGO_PKG_VERSION"));

pub fn ingest(cfg: &PipelineConfig) -> Result<()> {
    let clock: Arc<dyn Clock> = match cfg.input.recorded_at {
        Some(t) => Arc::new(SteppingClock::new(t, 0)),
        None => Arc::new(SystemClock),
    };
    let ing = Ingestor::local(&cfg.store_root, clock);
    let journal: SessionJournal = read_json(&cfg.input.journal).with_context(|| cfg.input.journal.display().to_string())?;
    if journal.session_id != cfg.session_id {
        bail!("journal session {} does not match config session {}", journal.session_id, cfg.session_id);
    }
    ing.register_session(&journal)?;
    let put = |path: &Path, kind: MediaKind| -> Result<()> {
        match cfg.input.recorded_at {
            Some(t) => {
                let f = std::fs::File::open(path).with_context(|| path.display().to_string())?;
                ing.ingest_asset(std::io::BufReader::new(f), kind, &cfg.session_id, Some(t))?;
            }
            None => {
                ing.ingest_file(path, kind, &cfg.session_id)?;
            }
        }
        Ok(())
    };
    put(&cfg.input.journal, MediaKind::Journal)?;
    put(&cfg.input.layout, MediaKind::VideoRasterBundle)?;
    let frames = FrameDir::open(&cfg.input.fisheye_dir)?;
    put(&cfg.input.fisheye_dir.join(media::FRAMES_INDEX), MediaKind::VideoRasterBundle)?;
    for e in &frames.index {
        put(&frames.frame_path(e.index), MediaKind::VideoRasterBundle)?;
    }
    if let Some(a) = &cfg.input.audio {
        put(a, MediaKind::AudioPcm)?;
    }
    let ledger = ing.seal_ledger(&cfg.session_id)?;
    std::fs::create_dir_all(&cfg.session_dir)?;
    write_json(&cfg.session_dir.join(layout::LEDGER), &ledger)?;
    let audio_dst = cfg.session_dir.join(layout::AUDIO);
    match &cfg.input.audio {
        Some(a) => atomic_write(&audio_dst, &std::fs::read(a)?)?,
        None if audio_dst.exists() => std::fs::remove_file(&audio_dst)?,
        None => {}
    }
    Ok(())
}

pub fn project(cfg: &PipelineConfig, pool: &ThreadPool) -> Result<()> {
    let layout_spec: FisheyeLayout = read_json(&cfg.input.layout).with_context(|| cfg.input.layout.display().to_string())?;
    let src = FrameDir::open(&cfg.input.fisheye_dir)?;
    let p = &cfg.projection;
    replace_dir(&cfg.session_dir.join(layout::VIEWS), |tmp| {
        let mut dirs = vec![(View::Erp, tmp.join(View::Erp.as_str()))];
        dirs.extend(p.views.iter().map(|v| (v.name, tmp.join(v.name.as_str()))));
        for (_, d) in &dirs {
            std::fs::create_dir_all(d)?;
        }
        pool.install(|| {
            src.index.par_iter().try_for_each(|e| -> Result<()> {
                let frame = TimedFrame {
                    image: src.load(e.index)?,
                    t_seconds: e.t_seconds,
                };
                let erp = dewarp_fisheye_to_erp(&frame, &layout_spec, p.erp_width, p.erp_height)?;
                media::write_ppm(&dirs[0].1.join(media::frame_file_name(e.index)), &erp.image)?;
                for (spec, (_, dir)) in p.views.iter().zip(&dirs[1..]) {
                    let v = render_rectilinear_view(&erp, spec)?;
                    media::write_ppm(&dir.join(media::frame_file_name(e.index)), &v.image)?;
                }
                Ok(())
            })
        })?;
        for (_, d) in &dirs {
            media::write_frames_index(d, &src.index)?;
        }
        Ok(())
    })
}

pub fn present_views(session_dir: &Path) -> Vec<View> {
    let root = session_dir.join(layout::VIEWS);
    View::ALL
        .iter()
        .copied()
        .filter(|v| root.join(v.as_str()).join(media::FRAMES_INDEX).exists())
        .collect()
}

pub fn session_audio(session_dir: &Path) -> Result<Option<PcmAudio>> {
    let p = session_dir.join(layout::AUDIO);
    Ok(if p.exists() { Some(media::read_wav(&p)?) } else { None })
}

/// Session duration: the audio length when audio exists, else the ERP
/// (or first present view) stream length.
pub fn session_duration(session_dir: &Path) -> Result<f64> {
    if let Some(a) = session_audio(session_dir)? {
        return Ok(a.duration());
    }
    let views = present_views(session_dir);
    let v = views.first().ok_or_else(|| anyhow!("no projected views"))?;
    Ok(FrameDir::open(session_dir.join(layout::VIEWS).join(v.as_str()))?.duration())
}

fn load_frames(fd: &FrameDir, entries: &[FrameIndexEntry]) -> Result<Vec<(f64, image::RgbImage)>> {
    entries
        .iter()
        .map(|e| Ok((e.t_seconds, fd.load(e.index)?)))
        .collect()
}

pub fn segment(cfg: &PipelineConfig, pool: &ThreadPool) -> Result<()> {
    let dir = &cfg.session_dir;
    let views = present_views(dir);
    if views.is_empty() {
        bail!("no projected views under {}", dir.join(layout::VIEWS).display());
    }
    let duration = session_duration(dir)?;
    let audio = session_audio(dir)?;
    let pcm = audio.as_ref().map(PcmAudio::to_normalized);
    let windows = plan_windows(duration, &cfg.segmenter)?;
    let dirs: BTreeMap<View, FrameDir> = views
        .iter()
        .map(|v| Ok((*v, FrameDir::open(dir.join(layout::VIEWS).join(v.as_str()))?)))
        .collect::<Result<_>>()?;
    let units: Vec<(View, usize, f64, f64)> = views
        .iter()
        .flat_map(|v| windows.iter().enumerate().map(move |(i, w)| (*v, i, w.0, w.1)))
        .collect();
    let sc = &cfg.segmenter;
    let clips: Vec<ClipRecord> = pool.install(|| {
        units
            .par_iter()
            .map(|&(view, idx, t0, t1)| -> Result<ClipRecord> {
                let fd = &dirs[&view];
                let frames = load_frames(fd, &fd.entries_in(t0, t1))?;
                let refs: Vec<&image::RgbImage> = frames.iter().map(|f| &f.1).collect();
                let black_ratio = if refs.is_empty() { 0.0 } else { compute_black_ratio(&refs, sc)? };
                let motion_energy = if refs.len() >= 2 { compute_motion_energy(&refs)? } else { 0.0 };
                let loudness = match (&audio, &pcm) {
                    (Some(a), Some(x)) => {
                        let (i0, i1) = (a.index_at(t0), a.index_at(t1));
                        if i1 > i0 {
                            compute_loudness(&x[i0..i1], sc.silence_floor_dbfs)?
                        } else {
                            sc.silence_floor_dbfs
                        }
                    }
                    _ => sc.silence_floor_dbfs,
                };
                let resolution = refs
                    .first()
                    .map(|f| format!("{}x{}", f.width(), f.height()))
                    .unwrap_or_default();
                Ok(ClipRecord {
                    clip_id: clip_id(&cfg.session_id, view, idx),
                    view,
                    t_start: t0,
                    t_end: t1,
                    fps: fd.fps(),
                    resolution,
                    lens: if view == View::Erp { Lens::Fisheye } else { Lens::Rectilinear },
                    descriptors: Descriptors {
                        black_ratio,
                        motion_energy,
                        loudness,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    write_jsonl(&dir.join(layout::CLIPS), &clips)?;
    Ok(())
}

fn load_fixture(cfg: &PipelineConfig) -> Result<ScriptedFixture> {
    match &cfg.detect.scripted_fixture {
        Some(p) => Ok(ScriptedFixture::load(p)?),
        None => Ok(ScriptedFixture::default()),
    }
}

/// View that carries session-wide audio evidence.
pub fn audio_view(clips: &[ClipRecord]) -> Option<View> {
    let mut views: Vec<View> = clips.iter().map(|c| c.view).collect();
    views.sort();
    views.dedup();
    if views.contains(&View::Erp) {
        Some(View::Erp)
    } else {
        views.first().copied()
    }
}

fn clap_items(anchors: &[ClapAnchor], clips: &[ClipRecord], view: View) -> Vec<EvidenceItem> {
    let mut out = Vec::new();
    for a in anchors {
        for (clip, t0, _) in clip_overlaps(clips, view, a.t, a.t) {
            let mut payload = serde_json::Map::new();
            payload.insert("strength".into(), json!(a.strength));
            out.push(EvidenceItem {
                item_id: String::new(),
                clip_id: clip.clip_id.clone(),
                view,
                class: EvidenceClass::ClapAnchor,
                t_start: t0,
                t_end: t0,
                confidence: a.confidence.clamp(0.0, 1.0),
                geometry: None,
                payload,
                evidence_uris: Vec::new(),
                suggested_action: SuggestedAction::None,
            });
        }
    }
    out
}

pub fn detect(cfg: &PipelineConfig, pool: &ThreadPool) -> Result<()> {
    let dir = &cfg.session_dir;
    let clips: Vec<ClipRecord> = read_jsonl(&dir.join(layout::CLIPS))?;
    let fixture = load_fixture(cfg)?;
    let d = &cfg.detect;
    let views_root = dir.join(layout::VIEWS);
    let mut dirs: BTreeMap<View, FrameDir> = BTreeMap::new();
    for c in &clips {
        if !dirs.contains_key(&c.view) {
            dirs.insert(c.view, FrameDir::open(views_root.join(c.view.as_str()))?);
        }
    }

    // (clip, detector) work units
    let per_clip: Vec<Vec<EvidenceItem>> = pool.install(|| {
        clips
            .par_iter()
            .map(|c| -> Result<Vec<EvidenceItem>> {
                let fd = &dirs[&c.view];
                let frames = load_frames(fd, &fd.entries_in(c.t_start, c.t_end))?;
                let refs: Vec<(f64, &image::RgbImage)> = frames.iter().map(|(t, f)| (*t, f)).collect();
                let mut items = detect_motion(&refs, c, &d.motion);
                items.extend(run_scripted_detector(&fixture, std::slice::from_ref(c), &d.replay)?);
                Ok(items)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut items: Vec<EvidenceItem> = per_clip.into_iter().flatten().collect();

    let views: Vec<View> = dirs.keys().copied().collect();
    let per_view: Vec<(Vec<Track>, Vec<EvidenceItem>)> = pool.install(|| {
        views
            .par_iter()
            .map(|&v| -> Result<(Vec<Track>, Vec<EvidenceItem>)> {
                let frames = replay_person_detections(&fixture, v);
                if frames.is_empty() {
                    return Ok((Vec::new(), Vec::new()));
                }
                let mut tracks = run_tracker(&frames, &d.tracker)?;
                for t in &mut tracks {
                    t.track_id = format!("{v}_{}", t.track_id);
                }
                link_reentries(&mut tracks, REENTRY_MIN_COSINE, REENTRY_WINDOW_S);
                let items = person_track_items(&tracks, &clips, v, dirs[&v].fps());
                Ok((tracks, items))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut tracks = Vec::new();
    for (t, it) in per_view {
        tracks.extend(t);
        items.extend(it);
    }

    let transcript = replay_transcript(&fixture);
    let hits = scan_pii(&transcript, &d.pii)?;
    let audio = session_audio(dir)?;
    let mut anchors = Vec::new();
    if let Some(av) = audio_view(&clips) {
        items.extend(pii_items(&hits, &clips, av));
        if let Some(a) = &audio {
            anchors = detect_claps(&a.to_normalized(), a.sample_rate, &d.clap)?;
            items.extend(clap_items(&anchors, &clips, av));
        }
    }
    if let Some(ext) = &d.external_dir {
        items.extend(gaze_core::detectors::external::load_directory(ext)?);
    }
    let items = finalize_items(items);
    for it in &items {
        it.validate()?;
    }

    let of = |classes: &[EvidenceClass]| -> Vec<EvidenceItem> {
        items.iter().filter(|i| classes.contains(&i.class)).cloned().collect()
    };
    replace_dir(&dir.join(layout::DETECT), |tmp| {
        write_jsonl(&tmp.join("evidence.jsonl"), &items)?;
        write_jsonl(&tmp.join("caption.jsonl"), &of(&[EvidenceClass::Caption]))?;
        write_jsonl(&tmp.join("tags.jsonl"), &of(&[EvidenceClass::ActivityTag]))?;
        write_jsonl(&tmp.join("nsfw.jsonl"), &of(&[EvidenceClass::Nsfw]))?;
        write_jsonl(
            &tmp.join("motion.jsonl"),
            &of(&[EvidenceClass::Idle, EvidenceClass::HighMotion, EvidenceClass::SceneChange]),
        )?;
        write_jsonl(&tmp.join("tracks.jsonl"), &tracks)?;
        write_jsonl(&tmp.join("asr.jsonl"), &transcript)?;
        write_jsonl(&tmp.join("pii.jsonl"), &hits)?;
        write_jsonl(&tmp.join("age.jsonl"), &face_age_records(&fixture, &d.replay))?;
        write_jsonl(&tmp.join("claps.jsonl"), &anchors)?;
        if let Some(a) = &audio {
            for (n, h) in hits.iter().enumerate() {
                let w = &h.redaction_plan;
                let (i0, i1) = (a.index_at(w.t_start), a.index_at(w.t_end));
                let snippet = PcmAudio::new(a.sample_rate, a.samples[i0..i1.max(i0)].to_vec());
                let p = tmp.join(gaze_core::detectors::pii::snippet_uri(n));
                std::fs::create_dir_all(p.parent().unwrap_or(tmp))?;
                media::write_wav(&p, &snippet)?;
            }
        }
        Ok(())
    })
}

pub fn fuse(cfg: &PipelineConfig) -> Result<()> {
    let dir = &cfg.session_dir;
    let clips: Vec<ClipRecord> = read_jsonl(&dir.join(layout::CLIPS))?;
    let evidence: Vec<EvidenceItem> = read_jsonl(&dir.join(layout::EVIDENCE))?;
    let duration = session_duration(dir)?;
    let out = build_timeline(&evidence, &clips, duration, &cfg.fusion)?;
    write_jsonl(&dir.join(layout::TIMELINE), &out.timeline)?;
    write_jsonl(&dir.join(layout::SKIPS), &out.skips)?;
    write_jsonl(&dir.join(layout::SUPPRESSED), &out.suppressed)?;
    write_json(&dir.join(layout::POLICY), &cfg.fusion)?;
    Ok(())
}

/// Versions of the detector families that contributed evidence.
pub fn model_versions(cfg: &PipelineConfig) -> Result<BTreeMap<String, String>> {
    let fixture = load_fixture(cfg)?;
    let v = env!("CARGO_PKG_VERSION");
    let mut m = BTreeMap::new();
    let scripted = if fixture.model_version.is_empty() {
        "none".to_string()
    } else {
        fixture.model_version.clone()
    };
    m.insert("scripted_replay".into(), scripted);
    m.insert("motion".into(), format!("frame-difference {v}"));
    m.insert("tracker".into(), format!("greedy-iou {v}"));
    m.insert("pii".into(), format!("rules {v}"));
    m.insert("clap".into(), format!("bandpass-onset {v}"));
    if cfg.detect.external_dir.is_some() {
        m.insert("external".into(), "directory".into());
    }
    Ok(m)
}

pub fn export(cfg: &PipelineConfig) -> Result<()> {
    let dir = &cfg.session_dir;
    let chain = verify_jsonl(&std::fs::read(dir.join(layout::AUDIT)).context("no audit log; review the session first")?)?;
    let finalized = chain.last().is_some_and(|r| r.event == AuditEvent::Finalize);
    let labels: Vec<FinalLabel> = if finalized {
        read_jsonl(&dir.join(layout::FINAL_LABELS))?
    } else {
        Vec::new()
    };
    let mut ledger: SessionLedger = read_json(&dir.join(layout::LEDGER))?;
    ledger.verify()?;
    let versions = model_versions(cfg)?;
    let mut reviewer_ids: Vec<String> = chain
        .iter()
        .filter(|r| r.event != AuditEvent::LockExpired)
        .map(|r| r.reviewer_id.clone())
        .collect();
    reviewer_ids.sort();
    reviewer_ids.dedup();
    let provenance = ProvenanceBundle {
        model_versions: versions.clone(),
        thresholds: cfg.fusion.clone(),
        reviewer_ids,
        software_build: SOFTWARE_BUILD.into(),
        ledger_digest: ledger.ledger_digest.clone(),
    };
    let thresholds: BTreeMap<String, f64> = cfg
        .fusion
        .thresholds
        .iter()
        .map(|(k, v)| (k.as_str().to_string(), *v))
        .collect();
    for m in gaze_core::ingest::PROVENANCE_MODULES {
        let t = if *m == "fusion" { thresholds.clone() } else { BTreeMap::new() };
        ledger.fill_provenance(m, SOFTWARE_BUILD, t);
    }
    ledger.fill_provenance("detectors", serde_json::to_string(&versions)?, BTreeMap::new());
    let extra = vec![("ledger.json".to_string(), gaze_core::io::canonical_json_bytes(&ledger)?)];
    let duration = session_duration(dir)?;
    let out = dir.join(layout::DELIVERABLE);
    let summary = export_session(&ExportRequest {
        session_dir: dir,
        out_dir: &out,
        labels: &labels,
        finalized,
        duration,
        view_specs: &cfg.projection.views,
        provenance: &provenance,
        config: &cfg.export,
        extra_files: &extra,
    })?;
    let missed = verify_no_unredacted(&labels, &summary.plans, duration);
    if !missed.is_empty() {
        bail!("governance labels without redaction: {}", missed.join(", "));
    }
    Ok(())
}
