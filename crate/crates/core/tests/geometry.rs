// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use gaze_core::projection::{
    dewarp_fisheye_to_erp, direction_to_erp_coords, erp_pixel_to_direction, render_dual_fisheye,
    render_rectilinear_view, sample_bilinear, views_cover_all_longitudes, Direction, FisheyeLayout, TimedFrame, View,
    ViewSpec,
};
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn smooth_erp(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |u, v| {
        let (lon, lat) = erp_pixel_to_direction(u, v, w, h).unwrap();
        let d = Direction::from_lon_lat(lon, lat);
        let c = |a: f64, b: f64, g: f64| (127.5 + 60.0 * (a * d.x + b * d.y + g * d.z)).round() as u8;
        Rgb([c(1.0, 0.5, 0.2), c(-0.4, 1.0, 0.6), c(0.3, -0.7, 1.0)])
    })
}

fn frame(image: RgbImage) -> TimedFrame {
    TimedFrame { image, t_seconds: 0.0 }
}

proptest! {
    #[test]
    fn lon_lat_round_trip(lon in -3.14f64..3.14, lat in -1.55f64..1.55) {
        let (lo, la) = Direction::from_lon_lat(lon, lat).lon_lat();
        prop_assert!((lo - lon).abs() < 1e-12);
        prop_assert!((la - lat).abs() < 1e-12);
    }

    #[test]
    fn erp_pixel_centers_round_trip(u in 0u32..1024, v in 0u32..512) {
        let (lon, lat) = erp_pixel_to_direction(u, v, 1024, 512).unwrap();
        let (x, y) = direction_to_erp_coords(lon, lat, 1024, 512);
        prop_assert!((x - (u as f64 + 0.5)).abs() < 1e-9);
        prop_assert!((y - (v as f64 + 0.5)).abs() < 1e-9);
    }

    #[test]
    fn yaw_and_pitch_are_rotations(lon in -3.0f64..3.0, lat in -1.5f64..1.5, a in -6.0f64..6.0) {
        let d = Direction::from_lon_lat(lon, lat);
        for r in [d.yawed(a), d.pitched(a)] {
            prop_assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
        let back = d.yawed(a).yawed(-a);
        prop_assert!((back.x - d.x).abs() < 1e-12 && (back.y - d.y).abs() < 1e-12 && (back.z - d.z).abs() < 1e-12);
        let (l2, t2) = d.yawed(a).lon_lat();
        let dl = (l2 - lon - a).rem_euclid(2.0 * PI);
        prop_assert!(dl < 1e-9 || 2.0 * PI - dl < 1e-9 || lat.abs() > 1.5);
        prop_assert!((t2 - lat).abs() < 1e-12);
    }

    #[test]
    fn fisheye_project_unproject(lon in -1.6f64..1.6, lat in -1.4f64..1.4, lens in 0usize..2) {
        let layout = FisheyeLayout::side_by_side(400, 190.0);
        let l = &layout.lenses[lens];
        let d = Direction::from_lon_lat(lon, lat).yawed(l.yaw_deg.to_radians());
        if let Some((x, y)) = l.project(&d) {
            let u = l.unproject(x, y).unwrap();
            prop_assert!((u.x - d.x).abs() < 1e-9 && (u.y - d.y).abs() < 1e-9 && (u.z - d.z).abs() < 1e-9);
        } else {
            prop_assert!(d.dot(&l.axis()) < (95.0f64).to_radians().cos() + 1e-12);
        }
    }

    #[test]
    fn nearest_lens_faces_the_direction(lon in -3.1f64..3.1, lat in -1.5f64..1.5) {
        let layout = FisheyeLayout::side_by_side(200, 190.0);
        let d = Direction::from_lon_lat(lon, lat);
        let l = layout.nearest_lens(&d);
        prop_assert!(d.dot(&l.axis()) >= -1e-12);
        prop_assert!(l.project(&d).is_some());
    }

    #[test]
    fn bilinear_at_pixel_centers_is_exact(x in 0u32..16, y in 0u32..8, seed in 0u8..255) {
        let img = RgbImage::from_fn(16, 8, |a, b| Rgb([(a * 13 + b * 7) as u8 ^ seed, seed, (a + b) as u8]));
        let s = sample_bilinear(&img, x as f64 + 0.5, y as f64 + 0.5, true);
        let p = img.get_pixel(x, y);
        for c in 0..3 {
            prop_assert_eq!(s[c], p[c] as f64);
        }
    }
}

#[test]
fn fisheye_round_trip_small() {
    let (w, h) = (256, 128);
    let erp = frame(smooth_erp(w, h));
    let layout = FisheyeLayout::side_by_side(128, 190.0);
    let fe = render_dual_fisheye(&erp, &layout, 256, 128).unwrap();
    let back = dewarp_fisheye_to_erp(&fe, &layout, w, h).unwrap();
    let mut worst = 0;
    for (u, v, p) in erp.image.enumerate_pixels() {
        let (lon, _) = erp_pixel_to_direction(u, v, w, h).unwrap();
        if ((lon.abs() - PI / 2.0).abs()) < 4f64.to_radians() {
            continue;
        }
        let q = back.image.get_pixel(u, v);
        for c in 0..3 {
            worst = worst.max(p[c].abs_diff(q[c]));
        }
    }
    assert!(worst <= 3, "max error {worst}");
}

#[test]
fn view_centers_look_along_their_yaw() {
    for spec in ViewSpec::default_four(97, 97) {
        let d = spec.ray(48.5, 48.5);
        let (lon, lat) = d.lon_lat();
        let want = spec.yaw_deg.to_radians();
        let dl = (lon - want).rem_euclid(2.0 * PI);
        assert!(dl < 1e-12 || 2.0 * PI - dl < 1e-12, "{:?}: lon {lon}", spec.name);
        assert_abs_diff_eq!(lat, 0.0, epsilon = 1e-12);
    }
}

#[test]
fn view_edges_span_the_horizontal_fov() {
    let spec = ViewSpec::default_four(100, 100).into_iter().find(|s| s.name == View::Front).unwrap();
    let (l, _) = spec.ray(0.0, 50.0).lon_lat();
    let (r, _) = spec.ray(100.0, 50.0).lon_lat();
    assert_abs_diff_eq!(l, -PI / 4.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r, PI / 4.0, epsilon = 1e-12);
}

#[test]
fn four_views_cover_the_horizon_and_three_do_not() {
    let views = ViewSpec::default_four(64, 64);
    assert!(views_cover_all_longitudes(&views));
    assert!(!views_cover_all_longitudes(&views[1..]));
}

#[test]
fn uniform_erp_renders_uniform_views() {
    let erp = frame(RgbImage::from_pixel(128, 64, Rgb([40, 90, 200])));
    for spec in ViewSpec::default_four(33, 21) {
        let v = render_rectilinear_view(&erp, &spec).unwrap();
        assert!(v.image.pixels().all(|p| p.0 == [40, 90, 200]));
    }
}

#[test]
fn front_center_equals_mean_of_erp_origin_pixels() {
    let erp = frame(RgbImage::from_fn(64, 32, |u, v| Rgb([(u * 4) as u8, (v * 8) as u8, ((u ^ v) * 3) as u8])));
    let spec = ViewSpec {
        name: View::Front,
        yaw_deg: 0.0,
        pitch_deg: 0.0,
        hfov_deg: 60.0,
        width: 31,
        height: 31,
    };
    let v = render_rectilinear_view(&erp, &spec).unwrap();
    let got = v.image.get_pixel(15, 15);
    for c in 0..3 {
        let s: u32 = [(31, 15), (32, 15), (31, 16), (32, 16)]
            .iter()
            .map(|&(x, y)| erp.image.get_pixel(x, y)[c] as u32)
            .sum();
        assert_eq!(got[c] as u32, (2 * s + 4) / 8);
    }
}

#[test]
fn yaw_equivariance_by_column_roll() {
    let (w, h) = (256u32, 128u32);
    let base = RgbImage::from_fn(w, h, |u, v| Rgb([(u % 251) as u8, (v * 2) as u8, ((u * v) % 253) as u8]));
    for quarter in 1..4u32 {
        let rolled = RgbImage::from_fn(w, h, |u, v| *base.get_pixel((u + quarter * w / 4) % w, v));
        let spec = ViewSpec {
            name: View::Right,
            yaw_deg: 90.0 * quarter as f64,
            pitch_deg: 10.0,
            hfov_deg: 80.0,
            width: 64,
            height: 48,
        };
        let a = render_rectilinear_view(&frame(base.clone()), &spec).unwrap();
        let b = render_rectilinear_view(&frame(rolled), &ViewSpec { yaw_deg: 0.0, ..spec }).unwrap();
        for (p, q) in a.image.pixels().zip(b.image.pixels()) {
            for c in 0..3 {
                assert!(p[c].abs_diff(q[c]) <= 2);
            }
        }
    }
}
