// SPDX-License-Identifier: Apache-2.0

//! Governance-filtered deliverable: redaction rendering, withheld-span
//! excision, raw ↔ export mapping and provenance.
//!
//! Visual plans are rendered per frame after a region partition: each pixel
//! belongs to the active plan with the smallest `plan_id` whose rectangle
//! covers it, and every plan's effect is computed from the input frame. The
//! output therefore does not depend on the order plans are listed in.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{canonical_digest, sha256_hex};
use crate::detectors::{BBox, EvidenceClass, SuggestedAction};
use crate::fusion::FusionPolicy;
use crate::intervals::{IntervalSet, Span};
use crate::io::{atomic_write, write_json, write_jsonl};
use crate::media::{self, FrameDir, FrameIndexEntry, MediaError, PcmAudio};
use crate::projection::{direction_to_erp_coords, View, ViewSpec};
use crate::review::FinalLabel;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("session is not finalized")]
    NotFinalized,
    #[error("span [{t_start}, {t_end}] outside stream of {duration} s")]
    SpanOutOfRange { t_start: f64, t_end: f64, duration: f64 },
    #[error("provenance incomplete: {0}")]
    ProvenanceIncomplete(String),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Blur,
    Mosaic,
    Box,
    Mute,
    ToneReplace,
    TextOverlay,
    Withhold,
}

impl PlanKind {
    pub fn is_visual(&self) -> bool {
        matches!(self, PlanKind::Blur | PlanKind::Mosaic | PlanKind::Box | PlanKind::TextOverlay)
    }

    pub fn is_audio(&self) -> bool {
        matches!(self, PlanKind::Mute | PlanKind::ToneReplace)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedactionParams {
    pub blur_radius: u32,
    pub blur_passes: u32,
    pub mosaic_cell: u32,
    pub tone_hz: f64,
    pub tone_dbfs: f64,
    /// Caption bar height as a fraction of frame height.
    pub overlay_height: f64,
}

impl Default for RedactionParams {
    fn default() -> Self {
        Self {
            blur_radius: 9,
            blur_passes: 3,
            mosaic_cell: 16,
            tone_hz: 1000.0,
            tone_dbfs: -20.0,
            overlay_height: 0.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedactionPlan {
    pub plan_id: String,
    pub kind: PlanKind,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<View>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay_text: Option<String>,
    pub source: String,
}

impl RedactionPlan {
    /// Closed in time so point-instant flags still cover their frame.
    pub fn active_at(&self, t: f64) -> bool {
        self.t_start <= t && t <= self.t_end
    }
}

// ----- visual ---------------------------------------------------------------

type Rect = (u32, u32, u32, u32);

fn rect_of(plan: &RedactionPlan, w: u32, h: u32, params: &RedactionParams) -> Option<Rect> {
    match plan.kind {
        PlanKind::TextOverlay => {
            let bar = ((h as f64 * params.overlay_height).ceil() as u32).clamp(1, h);
            Some((0, h - bar, w, h))
        }
        _ => match &plan.geometry {
            Some(b) => b.pixel_rect(w, h),
            None => (w > 0 && h > 0).then_some((0, 0, w, h)),
        },
    }
}

fn box_blur_region(img: &RgbImage, r: Rect, radius: u32, passes: u32) -> Vec<[u8; 3]> {
    let (x0, y0, x1, y1) = r;
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let mut buf: Vec<[f64; 3]> = Vec::with_capacity(w * h);
    for y in y0..y1 {
        for x in x0..x1 {
            let p = img.get_pixel(x, y).0;
            buf.push([p[0] as f64, p[1] as f64, p[2] as f64]);
        }
    }
    let rad = radius as i64;
    let blur_1d = |src: &[[f64; 3]], len: usize, stride: usize, lines: usize, line_stride: usize| {
        let mut out = src.to_vec();
        for l in 0..lines {
            for i in 0..len {
                let mut acc = [0.0; 3];
                for k in -rad..=rad {
                    let j = (i as i64 + k).clamp(0, len as i64 - 1) as usize;
                    let p = src[l * line_stride + j * stride];
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
                let n = (2 * rad + 1) as f64;
                out[l * line_stride + i * stride] = [acc[0] / n, acc[1] / n, acc[2] / n];
            }
        }
        out
    };
    for _ in 0..passes {
        buf = blur_1d(&buf, w, 1, h, w);
        buf = blur_1d(&buf, h, w, w, 1);
    }
    buf.iter()
        .map(|p| [p[0].round() as u8, p[1].round() as u8, p[2].round() as u8])
        .collect()
}

/// Mean of each `cell x cell` block anchored at the region origin, clipped
/// to the region; channel means rounded half away from zero.
fn mosaic_region(img: &RgbImage, r: Rect, cell: u32) -> Vec<[u8; 3]> {
    let (x0, y0, x1, y1) = r;
    let cell = cell.max(1);
    let w = (x1 - x0) as usize;
    let mut out = vec![[0u8; 3]; w * (y1 - y0) as usize];
    let mut cy = y0;
    while cy < y1 {
        let cy1 = (cy + cell).min(y1);
        let mut cx = x0;
        while cx < x1 {
            let cx1 = (cx + cell).min(x1);
            let mut sum = [0u64; 3];
            for y in cy..cy1 {
                for x in cx..cx1 {
                    let p = img.get_pixel(x, y).0;
                    for c in 0..3 {
                        sum[c] += p[c] as u64;
                    }
                }
            }
            let n = ((cx1 - cx) * (cy1 - cy)) as f64;
            let mean = [0, 1, 2].map(|c| (sum[c] as f64 / n).round() as u8);
            for y in cy..cy1 {
                for x in cx..cx1 {
                    out[(y - y0) as usize * w + (x - x0) as usize] = mean;
                }
            }
            cx = cx1;
        }
        cy = cy1;
    }
    out
}

fn overlay_color(text: &str) -> [u8; 3] {
    let h = sha256_hex(text.as_bytes());
    let b = hex::decode(&h[..6]).unwrap_or_else(|_| vec![0, 0, 0]);
    // keep the bar dark
    [b[0] / 4, b[1] / 4, b[2] / 4]
}

fn effect(img: &RgbImage, plan: &RedactionPlan, r: Rect, params: &RedactionParams) -> Vec<[u8; 3]> {
    let n = ((r.2 - r.0) * (r.3 - r.1)) as usize;
    match plan.kind {
        PlanKind::Blur => box_blur_region(img, r, params.blur_radius, params.blur_passes),
        PlanKind::Mosaic => mosaic_region(img, r, params.mosaic_cell),
        PlanKind::TextOverlay => vec![overlay_color(plan.overlay_text.as_deref().unwrap_or(&plan.plan_id)); n],
        _ => vec![[0, 0, 0]; n],
    }
}

/// Renders visual plans onto `img`. Plans are filtered to visual kinds;
/// pixels outside every plan rectangle are untouched.
pub fn render_visual(img: &RgbImage, plans: &[&RedactionPlan], params: &RedactionParams) -> RgbImage {
    let (w, h) = img.dimensions();
    let mut active: Vec<(&RedactionPlan, Rect)> = plans
        .iter()
        .filter(|p| p.kind.is_visual())
        .filter_map(|p| rect_of(p, w, h, params).map(|r| (*p, r)))
        .collect();
    active.sort_by(|a, b| a.0.plan_id.cmp(&b.0.plan_id));
    let mut out = img.clone();
    if active.is_empty() {
        return out;
    }
    let mut owner: Vec<Option<usize>> = vec![None; (w * h) as usize];
    for (k, (_, r)) in active.iter().enumerate() {
        for y in r.1..r.3 {
            for x in r.0..r.2 {
                let o = &mut owner[(y * w + x) as usize];
                if o.is_none() {
                    *o = Some(k);
                }
            }
        }
    }
    for (k, (plan, r)) in active.iter().enumerate() {
        let fx = effect(img, plan, *r, params);
        let rw = r.2 - r.0;
        for y in r.1..r.3 {
            for x in r.0..r.2 {
                if owner[(y * w + x) as usize] == Some(k) {
                    out.put_pixel(x, y, Rgb(fx[((y - r.1) * rw + (x - r.0)) as usize]));
                }
            }
        }
    }
    out
}

/// Maps a box in a rectilinear view onto ERP pixel boxes by projecting its
/// outline. Boxes straddling the ±180° seam come back as two pieces.
pub fn view_box_to_erp(spec: &ViewSpec, b: &BBox, erp_w: u32, erp_h: u32) -> Vec<BBox> {
    const STEPS: usize = 32;
    let mut pts = Vec::with_capacity(4 * STEPS + 1);
    for i in 0..=STEPS {
        let f = i as f64 / STEPS as f64;
        pts.push((b.x + f * b.w, b.y));
        pts.push((b.x + f * b.w, b.y + b.h));
        pts.push((b.x, b.y + f * b.h));
        pts.push((b.x + b.w, b.y + f * b.h));
    }
    pts.push((b.x + b.w / 2.0, b.y + b.h / 2.0));
    let coords: Vec<(f64, f64)> = pts
        .iter()
        .map(|&(x, y)| {
            let (lon, lat) = spec.ray(x, y).lon_lat();
            direction_to_erp_coords(lon, lat, erp_w, erp_h)
        })
        .collect();
    let ymin = coords.iter().map(|c| c.1).fold(f64::INFINITY, f64::min).max(0.0);
    let ymax = coords.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max).min(erp_h as f64);
    let w = erp_w as f64;
    // unwrap x relative to the center point so a seam crossing stays contiguous
    let cx = coords[coords.len() - 1].0;
    let xs: Vec<f64> = coords
        .iter()
        .map(|c| {
            let mut x = c.0;
            while x - cx > w / 2.0 {
                x -= w;
            }
            while cx - x > w / 2.0 {
                x += w;
            }
            x
        })
        .collect();
    let xmin = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (y, hh) = (ymin, (ymax - ymin).max(0.0));
    let mut out = Vec::new();
    let mut push = |a: f64, b: f64| {
        if b > a {
            out.push(BBox::new(a, y, b - a, hh));
        }
    };
    if xmin < 0.0 {
        push(xmin + w, w);
        push(0.0, xmax.min(w));
    } else if xmax > w {
        push(xmin, w);
        push(0.0, xmax - w);
    } else {
        push(xmin, xmax);
    }
    out
}

// ----- audio ----------------------------------------------------------------

/// Sample range `[round(t_start*sr), round(t_end*sr))`.
pub fn sample_range(t_start: f64, t_end: f64, sample_rate: u32) -> (usize, usize) {
    let sr = sample_rate as f64;
    ((t_start * sr).round().max(0.0) as usize, (t_end * sr).round().max(0.0) as usize)
}

pub fn tone_amplitude(dbfs: f64) -> f64 {
    10f64.powf(dbfs / 20.0) * std::f64::consts::SQRT_2
}

/// Applies one audio plan in place; non-audio plans are ignored.
pub fn render_audio(audio: &mut PcmAudio, plan: &RedactionPlan, params: &RedactionParams) -> Result<(), ExportError> {
    if !plan.kind.is_audio() {
        return Ok(());
    }
    let duration = audio.duration();
    if plan.t_start < 0.0 || plan.t_end > duration + 1e-9 || plan.t_end < plan.t_start {
        return Err(ExportError::SpanOutOfRange {
            t_start: plan.t_start,
            t_end: plan.t_end,
            duration,
        });
    }
    let (a, b) = sample_range(plan.t_start, plan.t_end, audio.sample_rate);
    let b = b.min(audio.samples.len());
    let sr = audio.sample_rate as f64;
    let amp = tone_amplitude(params.tone_dbfs);
    for n in a..b {
        audio.samples[n] = match plan.kind {
            PlanKind::ToneReplace => {
                media::normalized_to_i16(amp * (2.0 * std::f64::consts::PI * params.tone_hz * n as f64 / sr).sin())
            }
            _ => 0,
        };
    }
    Ok(())
}

// ----- plans from labels ----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VisualStyle {
    #[default]
    Blur,
    Mosaic,
    Box,
}

/// Expands actionable labels into concrete plans. Visual actions produce one
/// plan per labelled view (plus the projected ERP footprint when the ERP is
/// exported); a visual label without geometry covers the whole frame.
pub fn plans_from_labels(
    labels: &[FinalLabel],
    style: VisualStyle,
    view_specs: &BTreeMap<View, ViewSpec>,
    erp_size: Option<(u32, u32)>,
) -> Vec<RedactionPlan> {
    let visual_kind = match style {
        VisualStyle::Blur => PlanKind::Blur,
        VisualStyle::Mosaic => PlanKind::Mosaic,
        VisualStyle::Box => PlanKind::Box,
    };
    let mut plans = Vec::new();
    for l in labels.iter().filter(|l| l.actionable) {
        let mut n = 0;
        let mut push = |kind, view, geometry, text: Option<String>| {
            plans.push(RedactionPlan {
                plan_id: format!("{}:{n:02}", l.timeline_id),
                kind,
                t_start: l.t_start,
                t_end: l.t_end,
                view,
                geometry,
                overlay_text: text,
                source: l.timeline_id.clone(),
            });
            n += 1;
        };
        match l.action {
            SuggestedAction::Withhold => push(PlanKind::Withhold, None, None, None),
            SuggestedAction::Mute => push(PlanKind::Mute, None, None, None),
            SuggestedAction::ToneReplace => push(PlanKind::ToneReplace, None, None, None),
            SuggestedAction::TextOverlay => {
                push(PlanKind::Mute, None, None, None);
                let text = format!("[REDACTED {} {}]", l.class, l.timeline_id);
                for &v in &l.views {
                    push(PlanKind::TextOverlay, Some(v), None, Some(text.clone()));
                }
            }
            SuggestedAction::Blur | SuggestedAction::BlurAndReview => {
                let mut erp_boxes: Vec<Option<BBox>> = Vec::new();
                for &v in &l.views {
                    let g = l.geometry.get(&v).copied();
                    push(visual_kind, Some(v), g, None);
                    if v == View::Erp {
                        continue;
                    }
                    match (g, view_specs.get(&v), erp_size) {
                        (Some(b), Some(spec), Some((w, h))) => {
                            erp_boxes.extend(view_box_to_erp(spec, &b, w, h).into_iter().map(Some))
                        }
                        (None, _, Some(_)) => erp_boxes.push(None),
                        _ => {}
                    }
                }
                if erp_size.is_some() && !l.views.contains(&View::Erp) {
                    if erp_boxes.iter().any(Option::is_none) {
                        push(visual_kind, Some(View::Erp), None, None);
                    } else {
                        for b in erp_boxes {
                            push(visual_kind, Some(View::Erp), b, None);
                        }
                    }
                }
            }
            SuggestedAction::Skip | SuggestedAction::None => {}
        }
    }
    plans.sort_by(|a, b| a.plan_id.cmp(&b.plan_id));
    plans
}

// ----- mapping --------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExportSpan {
    Span { t_start: f64, t_end: f64 },
    Withheld(String),
}

pub const WITHHELD: &str = "WITHHELD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingEntry {
    pub raw_start: f64,
    pub raw_end: f64,
    pub export: ExportSpan,
    pub plan_ids: Vec<String>,
}

/// Partitions `[0, duration]` at withheld boundaries and re-bases the kept
/// pieces so export time is gapless.
pub fn build_mapping(duration: f64, plans: &[RedactionPlan]) -> Vec<MappingEntry> {
    let withheld = withheld_set(plans, duration);
    let mut cuts: Vec<f64> = vec![0.0, duration];
    for s in withheld.spans() {
        cuts.push(s.start);
        cuts.push(s.end);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::new();
    let mut removed = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let piece = Span::new(a, b);
        let is_withheld = withheld.spans().iter().any(|s| s.start <= a && b <= s.end);
        let mut plan_ids: Vec<String> = plans
            .iter()
            .filter(|p| p.t_start < b && a < p.t_end || (p.t_start == p.t_end && a <= p.t_start && p.t_start < b))
            .map(|p| p.plan_id.clone())
            .collect();
        plan_ids.sort();
        let export = if is_withheld {
            removed += piece.len();
            ExportSpan::Withheld(WITHHELD.into())
        } else {
            ExportSpan::Span {
                t_start: a - removed,
                t_end: b - removed,
            }
        };
        out.push(MappingEntry {
            raw_start: a,
            raw_end: b,
            export,
            plan_ids,
        });
    }
    out
}

fn withheld_set(plans: &[RedactionPlan], duration: f64) -> IntervalSet {
    IntervalSet::from_spans(
        plans
            .iter()
            .filter(|p| p.kind == PlanKind::Withhold)
            .map(|p| Span::new(p.t_start.max(0.0), p.t_end.min(duration))),
    )
}

/// Export time for raw time `t`, or `None` when `t` was withheld.
pub fn raw_to_export(mapping: &[MappingEntry], t: f64) -> Option<f64> {
    mapping.iter().find_map(|m| match &m.export {
        ExportSpan::Span { t_start, .. } if m.raw_start <= t && t <= m.raw_end => Some(t_start + (t - m.raw_start)),
        _ => None,
    })
}

/// Raw time for export time `t`.
pub fn export_to_raw(mapping: &[MappingEntry], t: f64) -> Option<f64> {
    mapping.iter().find_map(|m| match &m.export {
        ExportSpan::Span { t_start, t_end } if *t_start <= t && t <= *t_end => Some(m.raw_start + (t - t_start)),
        _ => None,
    })
}

// ----- provenance and ledger --------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceBundle {
    pub model_versions: BTreeMap<String, String>,
    pub thresholds: FusionPolicy,
    pub reviewer_ids: Vec<String>,
    pub software_build: String,
    pub ledger_digest: String,
}

impl ProvenanceBundle {
    pub fn validate(&self) -> Result<(), ExportError> {
        let bad = |m: &str| Err(ExportError::ProvenanceIncomplete(m.into()));
        if self.model_versions.is_empty() || self.model_versions.values().any(String::is_empty) {
            return bad("model versions");
        }
        if self.reviewer_ids.is_empty() {
            return bad("reviewer ids");
        }
        if self.software_build.is_empty() {
            return bad("software build");
        }
        if self.ledger_digest.is_empty() {
            return bad("ledger digest");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportLedgerEntry {
    pub path: String,
    pub content_hash: String,
    pub byte_size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportLedger {
    pub entries: Vec<ExportLedgerEntry>,
    pub ledger_digest: String,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Hashes every file under `root` (relative paths, `/` separated, sorted).
pub fn ledger_for_dir(root: &Path, exclude: &[&str]) -> Result<ExportLedger, ExportError> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files).map_err(io_err(root))?;
    let mut entries = Vec::new();
    for f in files {
        let rel = f
            .strip_prefix(root)
            .unwrap_or(&f)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        if exclude.contains(&rel.as_str()) {
            continue;
        }
        let bytes = std::fs::read(&f).map_err(io_err(&f))?;
        entries.push(ExportLedgerEntry {
            path: rel,
            content_hash: sha256_hex(&bytes),
            byte_size: bytes.len() as u64,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let ledger_digest = canonical_digest(&entries).unwrap_or_default();
    Ok(ExportLedger { entries, ledger_digest })
}

// ----- session export ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub params: RedactionParams,
    pub visual_style: VisualStyle,
}

pub struct ExportRequest<'a> {
    /// Directory holding `views/<view>/` frame dirs and `audio.wav`.
    pub session_dir: &'a Path,
    pub out_dir: &'a Path,
    pub labels: &'a [FinalLabel],
    pub finalized: bool,
    pub duration: f64,
    pub view_specs: &'a [ViewSpec],
    pub provenance: &'a ProvenanceBundle,
    pub config: &'a ExportConfig,
    /// Additional `(relative path, bytes)` files placed in the deliverable
    /// before the export ledger is computed.
    pub extra_files: &'a [(String, Vec<u8>)],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub plans: Vec<RedactionPlan>,
    pub mapping: Vec<MappingEntry>,
    pub export_duration: f64,
    pub frames_written: usize,
    pub frames_redacted: usize,
    pub frames_withheld: usize,
    pub ledger_digest: String,
}

pub const EXPORT_LEDGER: &str = "export_ledger.json";

fn in_withheld(withheld: &IntervalSet, t: f64) -> bool {
    withheld.spans().iter().any(|s| s.start <= t && t < s.end)
}

pub fn export_session(req: &ExportRequest<'_>) -> Result<ExportSummary, ExportError> {
    if !req.finalized {
        return Err(ExportError::NotFinalized);
    }
    req.provenance.validate()?;
    let views_root = req.session_dir.join("views");
    let mut present: Vec<View> = View::ALL
        .iter()
        .copied()
        .filter(|v| views_root.join(v.as_str()).join(media::FRAMES_INDEX).exists())
        .collect();
    present.sort();
    let erp_size = if present.contains(&View::Erp) {
        let fd = FrameDir::open(views_root.join("erp"))?;
        match fd.index.first() {
            Some(e) => Some(fd.load(e.index)?.dimensions()),
            None => None,
        }
    } else {
        None
    };
    let specs: BTreeMap<View, ViewSpec> = req.view_specs.iter().map(|s| (s.name, s.clone())).collect();
    let plans = plans_from_labels(req.labels, req.config.visual_style, &specs, erp_size);
    let withheld = withheld_set(&plans, req.duration);
    let mapping = build_mapping(req.duration, &plans);

    if req.out_dir.exists() {
        std::fs::remove_dir_all(req.out_dir).map_err(io_err(req.out_dir))?;
    }
    std::fs::create_dir_all(req.out_dir).map_err(io_err(req.out_dir))?;

    let (mut written, mut redacted, mut dropped) = (0, 0, 0);
    for &view in &present {
        let fd = FrameDir::open(views_root.join(view.as_str()))?;
        let out = req.out_dir.join("frames").join(view.as_str());
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        let view_plans: Vec<&RedactionPlan> = plans.iter().filter(|p| p.view == Some(view)).collect();
        let mut index = Vec::new();
        for e in &fd.index {
            if in_withheld(&withheld, e.t_seconds) {
                dropped += 1;
                continue;
            }
            let Some(t_export) = raw_to_export(&mapping, e.t_seconds) else {
                dropped += 1;
                continue;
            };
            let new_idx = index.len() as u32;
            let dst = out.join(media::frame_file_name(new_idx));
            let active: Vec<&RedactionPlan> = view_plans.iter().copied().filter(|p| p.active_at(e.t_seconds)).collect();
            if active.is_empty() {
                let src = fd.frame_path(e.index);
                let bytes = std::fs::read(&src).map_err(io_err(&src))?;
                atomic_write(&dst, &bytes).map_err(io_err(&dst))?;
            } else {
                let img = fd.load(e.index)?;
                media::write_ppm(&dst, &render_visual(&img, &active, &req.config.params))?;
                redacted += 1;
            }
            index.push(FrameIndexEntry {
                index: new_idx,
                t_seconds: crate::canonical::round_float(t_export),
            });
            written += 1;
        }
        media::write_frames_index(&out, &index)?;
    }

    let audio_src = req.session_dir.join("audio.wav");
    if audio_src.exists() {
        let mut audio = media::read_wav(&audio_src)?;
        for p in plans.iter().filter(|p| p.kind.is_audio()) {
            let mut p = p.clone();
            p.t_end = p.t_end.min(audio.duration());
            p.t_start = p.t_start.min(p.t_end);
            render_audio(&mut audio, &p, &req.config.params)?;
        }
        let mut keep = vec![true; audio.samples.len()];
        for s in withheld.spans() {
            let (a, b) = sample_range(s.start, s.end, audio.sample_rate);
            for k in keep.iter_mut().take(b.min(audio.samples.len())).skip(a) {
                *k = false;
            }
        }
        let samples: Vec<i16> = audio.samples.iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| *s).collect();
        media::write_wav(&req.out_dir.join("audio.wav"), &PcmAudio::new(audio.sample_rate, samples))?;
    }

    let p = req.out_dir.join("mapping.json");
    write_json(&p, &mapping).map_err(io_err(&p))?;
    let p = req.out_dir.join("plans.jsonl");
    write_jsonl(&p, &plans).map_err(io_err(&p))?;
    let p = req.out_dir.join("provenance.json");
    write_json(&p, req.provenance).map_err(io_err(&p))?;
    let p = req.out_dir.join("final_labels.jsonl");
    write_jsonl(&p, req.labels).map_err(io_err(&p))?;
    for (rel, bytes) in req.extra_files {
        let p = req.out_dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        atomic_write(&p, bytes).map_err(io_err(&p))?;
    }
    let ledger = ledger_for_dir(req.out_dir, &[EXPORT_LEDGER])?;
    let p = req.out_dir.join(EXPORT_LEDGER);
    write_json(&p, &ledger).map_err(io_err(&p))?;

    Ok(ExportSummary {
        export_duration: req.duration - withheld.total_len(),
        plans,
        mapping,
        frames_written: written,
        frames_redacted: redacted,
        frames_withheld: dropped,
        ledger_digest: ledger.ledger_digest,
    })
}

/// Actionable governance labels whose span is neither fully withheld nor
/// covered by plans of the matching kind (audio for mute-type actions; every
/// labelled view for visual actions). Returns their timeline ids.
pub fn verify_no_unredacted(labels: &[FinalLabel], plans: &[RedactionPlan], duration: f64) -> Vec<String> {
    let withheld = withheld_set(plans, duration);
    let mut bad = Vec::new();
    for l in labels.iter().filter(|l| l.actionable && l.class.is_governance()) {
        let span = IntervalSet::from_spans([Span::new(l.t_start, l.t_end)]);
        let fully_withheld = if l.t_start == l.t_end {
            in_withheld(&withheld, l.t_start)
        } else {
            span.subtract(&withheld).is_empty()
        };
        if fully_withheld {
            continue;
        }
        let mine: Vec<&RedactionPlan> = plans.iter().filter(|p| p.source == l.timeline_id).collect();
        let covers = |p: &&&RedactionPlan| p.t_start <= l.t_start && l.t_end <= p.t_end;
        let ok = match l.action {
            SuggestedAction::Mute | SuggestedAction::ToneReplace => mine.iter().filter(covers).any(|p| p.kind.is_audio()),
            SuggestedAction::TextOverlay => mine.iter().filter(covers).any(|p| p.kind.is_audio()),
            SuggestedAction::Blur | SuggestedAction::BlurAndReview => {
                let views: BTreeSet<View> = mine
                    .iter()
                    .filter(covers)
                    .filter(|p| p.kind.is_visual())
                    .filter_map(|p| p.view)
                    .collect();
                l.views.iter().all(|v| views.contains(v))
            }
            SuggestedAction::Withhold => false,
            SuggestedAction::Skip | SuggestedAction::None => true,
        };
        if !ok {
            bad.push(l.timeline_id.clone());
        }
    }
    bad
}

/// Labels carrying governance classes, for callers that filter reports.
pub fn governance_labels(labels: &[FinalLabel]) -> impl Iterator<Item = &FinalLabel> {
    labels.iter().filter(|l| matches!(l.class, EvidenceClass::Pii | EvidenceClass::MinorRisk | EvidenceClass::Nsfw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(id: &str, kind: PlanKind, g: Option<BBox>) -> RedactionPlan {
        RedactionPlan {
            plan_id: id.into(),
            kind,
            t_start: 0.0,
            t_end: 1.0,
            view: Some(View::Front),
            geometry: g,
            overlay_text: None,
            source: "tl_000000".into(),
        }
    }

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 11 % 256) as u8, ((x + y) * 3 % 256) as u8]))
    }

    #[test]
    fn zero_area_is_identity() {
        let img = gradient(32, 32);
        let p = plan("a", PlanKind::Blur, Some(BBox::new(5.0, 5.0, 0.0, 10.0)));
        assert_eq!(render_visual(&img, &[&p], &RedactionParams::default()), img);
    }

    #[test]
    fn box_blackens_only_region() {
        let img = gradient(32, 32);
        let p = plan("a", PlanKind::Box, Some(BBox::new(4.0, 6.0, 8.0, 8.0)));
        let out = render_visual(&img, &[&p], &RedactionParams::default());
        for (x, y, px) in out.enumerate_pixels() {
            let inside = (4..12).contains(&x) && (6..14).contains(&y);
            if inside {
                assert_eq!(px.0, [0, 0, 0]);
            } else {
                assert_eq!(px, img.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn overlap_order_independent() {
        let img = gradient(48, 48);
        let a = plan("a", PlanKind::Blur, Some(BBox::new(0.0, 0.0, 30.0, 30.0)));
        let b = plan("b", PlanKind::Mosaic, Some(BBox::new(10.0, 10.0, 30.0, 30.0)));
        let p = RedactionParams::default();
        assert_eq!(render_visual(&img, &[&a, &b], &p), render_visual(&img, &[&b, &a], &p));
    }

    #[test]
    fn mute_index_range() {
        let mut audio = PcmAudio::new(16000, vec![1000; 16000 * 6]);
        let mut p = plan("m", PlanKind::Mute, None);
        p.t_start = 3.0;
        p.t_end = 4.0;
        render_audio(&mut audio, &p, &RedactionParams::default()).unwrap();
        for (i, s) in audio.samples.iter().enumerate() {
            assert_eq!(*s == 0, (48000..64000).contains(&i), "sample {i}");
        }
        p.t_end = 7.0;
        assert!(matches!(
            render_audio(&mut audio, &p, &RedactionParams::default()),
            Err(ExportError::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn tone_level() {
        let mut audio = PcmAudio::new(16000, vec![0; 16000 * 2]);
        let mut p = plan("t", PlanKind::ToneReplace, None);
        p.t_start = 0.5;
        p.t_end = 1.5;
        render_audio(&mut audio, &p, &RedactionParams::default()).unwrap();
        let seg = &audio.to_normalized()[8000..24000];
        let rms = (seg.iter().map(|x| x * x).sum::<f64>() / seg.len() as f64).sqrt();
        assert!((20.0 * rms.log10() + 20.0).abs() < 0.1);
    }

    #[test]
    fn withheld_rebase() {
        let mut p = plan("w", PlanKind::Withhold, None);
        p.t_start = 10.0;
        p.t_end = 20.0;
        let m = build_mapping(60.0, &[p]);
        assert_eq!(m.len(), 3);
        assert_eq!(m[1].export, ExportSpan::Withheld(WITHHELD.into()));
        assert_eq!(m[2].raw_start, 20.0);
        assert_eq!(m[2].export, ExportSpan::Span { t_start: 10.0, t_end: 50.0 });
        assert_eq!(raw_to_export(&m, 30.0), Some(20.0));
        assert_eq!(export_to_raw(&m, 20.0), Some(30.0));
        assert_eq!(raw_to_export(&m, 15.0), None);
    }

    #[test]
    fn front_box_lands_near_erp_center() {
        let spec = ViewSpec::default_four(64, 64).into_iter().find(|s| s.name == View::Front).unwrap();
        let boxes = view_box_to_erp(&spec, &BBox::new(28.0, 28.0, 8.0, 8.0), 256, 128);
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        assert!(b.x < 128.0 && b.x + b.w > 128.0 && b.y < 64.0 && b.y + b.h > 64.0);
        let back = ViewSpec::default_four(64, 64).into_iter().find(|s| s.name == View::Back).unwrap();
        assert_eq!(view_box_to_erp(&back, &BBox::new(28.0, 28.0, 8.0, 8.0), 256, 128).len(), 2);
    }
}
