// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use gaze_core::detectors::{BBox, EvidenceClass, SuggestedAction};
use gaze_core::export::{
    build_mapping, export_to_raw, plans_from_labels, raw_to_export, render_audio, render_visual, sample_range,
    verify_no_unredacted, ExportSpan, PlanKind, RedactionParams, RedactionPlan, VisualStyle,
};
use gaze_core::fusion::ItemStatus;
use gaze_core::media::PcmAudio;
use gaze_core::projection::{View, ViewSpec};
use gaze_core::review::FinalLabel;
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn noise(w: u32, h: u32, seed: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let v = (x.wrapping_mul(73_856_093) ^ y.wrapping_mul(19_349_663) ^ seed.wrapping_mul(83_492_791)) % 65_521;
        Rgb([(v % 256) as u8, (v / 256) as u8, ((v * 7) % 256) as u8])
    })
}

fn plan(id: &str, kind: PlanKind, geometry: Option<BBox>, t0: f64, t1: f64) -> RedactionPlan {
    RedactionPlan {
        plan_id: id.into(),
        kind,
        t_start: t0,
        t_end: t1,
        view: Some(View::Front),
        geometry,
        overlay_text: None,
        source: "tl_000000".into(),
    }
}

fn rect(b: &BBox, w: u32, h: u32) -> (u32, u32, u32, u32) {
    let c = |v: f64, hi: u32| v.clamp(0.0, hi as f64) as u32;
    (c(b.x.floor(), w), c(b.y.floor(), h), c((b.x + b.w).ceil(), w), c((b.y + b.h).ceil(), h))
}

fn inside(r: (u32, u32, u32, u32), x: u32, y: u32) -> bool {
    r.0 <= x && x < r.2 && r.1 <= y && y < r.3
}

fn label(id: &str, action: SuggestedAction, t0: f64, t1: f64, geometry: Option<BBox>) -> FinalLabel {
    FinalLabel {
        timeline_id: id.into(),
        class: EvidenceClass::MinorRisk,
        t_start: t0,
        t_end: t1,
        views: BTreeSet::from([View::Front]),
        geometry: geometry.map(|b| BTreeMap::from([(View::Front, b)])).unwrap_or_default(),
        action,
        actionable: true,
        status: ItemStatus::Accepted,
        rationale_code: None,
        reviewer_id: "r".into(),
        confidence: 0.9,
        evidence_refs: vec![],
    }
}

proptest! {
    #[test]
    fn visual_kinds_touch_only_their_rectangle(
        x in -20.0f64..90.0, y in -20.0f64..70.0, w in 0.5f64..60.0, h in 0.5f64..60.0,
        kind in prop::sample::select(vec![PlanKind::Blur, PlanKind::Mosaic, PlanKind::Box]),
        seed in 0u32..1000,
    ) {
        let img = noise(96, 72, seed);
        let b = BBox::new(x, y, w, h);
        let out = render_visual(&img, &[&plan("p", kind, Some(b), 0.0, 1.0)], &RedactionParams::default());
        let r = rect(&b, 96, 72);
        for (px, py, p) in img.enumerate_pixels() {
            if !inside(r, px, py) {
                prop_assert_eq!(p, out.get_pixel(px, py));
            } else if kind == PlanKind::Box {
                prop_assert_eq!(out.get_pixel(px, py).0, [0, 0, 0]);
            }
        }
    }

    #[test]
    fn overlapping_plans_resolve_to_the_lowest_id(seed in 0u32..1000, dx in 0.0f64..30.0) {
        let img = noise(64, 48, seed);
        let a = plan("a", PlanKind::Box, Some(BBox::new(5.0, 5.0, 30.0, 30.0)), 0.0, 1.0);
        let b = plan("b", PlanKind::Mosaic, Some(BBox::new(5.0 + dx, 10.0, 30.0, 30.0)), 0.0, 1.0);
        let both = render_visual(&img, &[&b, &a], &RedactionParams::default());
        let only_b = render_visual(&img, &[&b], &RedactionParams::default());
        let ra = rect(&a.geometry.unwrap(), 64, 48);
        for (x, y, p) in both.enumerate_pixels() {
            if inside(ra, x, y) {
                prop_assert_eq!(p.0, [0, 0, 0]);
            } else {
                prop_assert_eq!(p, only_b.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn audio_plans_change_exactly_their_sample_range(t0 in 0.0f64..1.9, len in 0.0f64..1.0, tone in any::<bool>()) {
        let sr = 8000;
        let src: Vec<i16> = (0..2 * sr).map(|n| ((n * 37) % 4001) as i16 - 2000).collect();
        let mut audio = PcmAudio::new(sr, src.clone());
        let t1 = (t0 + len).min(2.0);
        let kind = if tone { PlanKind::ToneReplace } else { PlanKind::Mute };
        render_audio(&mut audio, &plan("p", kind, None, t0, t1), &RedactionParams::default()).unwrap();
        let (a, b) = sample_range(t0, t1, sr);
        prop_assert_eq!(a, (t0 * 8000.0).round() as usize);
        prop_assert_eq!(b, (t1 * 8000.0).round() as usize);
        for n in 0..src.len() {
            if n < a || n >= b {
                prop_assert_eq!(audio.samples[n], src[n]);
            } else if !tone {
                prop_assert_eq!(audio.samples[n], 0);
            }
        }
    }

    #[test]
    fn mapping_round_trips_outside_withheld_spans(
        spans in prop::collection::vec((0.0f64..100.0, 0.0f64..15.0), 0..5),
        probes in prop::collection::vec(0.0f64..100.0, 1..40),
    ) {
        let plans: Vec<RedactionPlan> = spans
            .iter()
            .enumerate()
            .map(|(i, (s, l))| plan(&format!("w{i}"), PlanKind::Withhold, None, *s, (s + l).min(100.0)))
            .collect();
        let mapping = build_mapping(100.0, &plans);
        let withheld = |t: f64| plans.iter().any(|p| p.t_start < t && t < p.t_end);
        let kept: f64 = mapping
            .iter()
            .filter(|m| matches!(m.export, ExportSpan::Span { .. }))
            .map(|m| m.raw_end - m.raw_start)
            .sum();
        let last_end = mapping
            .iter()
            .filter_map(|m| match m.export {
                ExportSpan::Span { t_end, .. } => Some(t_end),
                _ => None,
            })
            .fold(0.0, f64::max);
        prop_assert!((kept - last_end).abs() < 1e-9, "export timeline is not gapless");
        let mut prev: Option<(f64, f64)> = None;
        let mut sorted = probes.clone();
        sorted.sort_by(f64::total_cmp);
        for t in sorted {
            match raw_to_export(&mapping, t) {
                Some(e) => {
                    prop_assert!(!withheld(t));
                    let back = export_to_raw(&mapping, e).unwrap();
                    prop_assert!((back - t).abs() < 1e-9 || withheld(back) || plans.iter().any(|p| (p.t_start - t).abs() < 1e-9 || (p.t_end - t).abs() < 1e-9));
                    if let Some((pt, pe)) = prev {
                        prop_assert!(e >= pe - 1e-9, "export time went backwards at {} (prev {})", t, pt);
                    }
                    prev = Some((t, e));
                }
                None => prop_assert!(plans.iter().any(|p| p.t_start <= t && t <= p.t_end)),
            }
        }
    }
}

#[test]
fn mosaic_cells_are_block_means() {
    let img = noise(50, 40, 3);
    let b = BBox::new(3.0, 4.0, 37.0, 29.0);
    let params = RedactionParams {
        mosaic_cell: 8,
        ..Default::default()
    };
    let out = render_visual(&img, &[&plan("m", PlanKind::Mosaic, Some(b), 0.0, 1.0)], &params);
    for y in 4..33u32 {
        for x in 3..40u32 {
            let (cx, cy) = (3 + (x - 3) / 8 * 8, 4 + (y - 4) / 8 * 8);
            for c in 0..3 {
                let mut s = 0u32;
                let mut n = 0u32;
                for yy in cy..(cy + 8).min(33) {
                    for xx in cx..(cx + 8).min(40) {
                        s += img.get_pixel(xx, yy)[c] as u32;
                        n += 1;
                    }
                }
                assert_eq!(out.get_pixel(x, y)[c] as u32, (2 * s + n) / (2 * n), "({x},{y}) channel {c}");
            }
        }
    }
}

#[test]
fn overlay_covers_only_the_bottom_bar() {
    let img = noise(40, 50, 1);
    let mut p = plan("o", PlanKind::TextOverlay, None, 0.0, 1.0);
    p.overlay_text = Some("[REDACTED]".into());
    let params = RedactionParams::default();
    let out = render_visual(&img, &[&p], &params);
    let bar = (50.0 * params.overlay_height).ceil() as u32;
    for (x, y, q) in out.enumerate_pixels() {
        if y < 50 - bar {
            assert_eq!(q, img.get_pixel(x, y));
        } else {
            assert_eq!(q, out.get_pixel(0, 49));
        }
    }
}

#[test]
fn plans_cover_every_governance_label() {
    let specs: BTreeMap<View, ViewSpec> = ViewSpec::default_four(64, 64).into_iter().map(|s| (s.name, s)).collect();
    let labels = vec![
        label("tl_000001", SuggestedAction::BlurAndReview, 1.0, 4.0, Some(BBox::new(10.0, 10.0, 20.0, 20.0))),
        label("tl_000002", SuggestedAction::Mute, 2.0, 3.0, None),
        label("tl_000003", SuggestedAction::Withhold, 5.0, 6.0, None),
        label("tl_000004", SuggestedAction::TextOverlay, 7.0, 8.0, None),
    ];
    let plans = plans_from_labels(&labels, VisualStyle::Mosaic, &specs, Some((256, 128)));
    assert!(verify_no_unredacted(&labels, &plans, 10.0).is_empty());
    let kinds: BTreeSet<PlanKind> = plans.iter().map(|p| p.kind).collect();
    for k in [PlanKind::Mosaic, PlanKind::Mute, PlanKind::Withhold, PlanKind::TextOverlay] {
        assert!(kinds.contains(&k), "{k:?} missing");
    }
    assert!(plans.iter().any(|p| p.view == Some(View::Erp)), "ERP footprint missing");
    let without_mute: Vec<RedactionPlan> = plans.iter().filter(|p| p.source != "tl_000002").cloned().collect();
    assert_eq!(verify_no_unredacted(&labels, &without_mute, 10.0), vec!["tl_000002".to_string()]);
}
