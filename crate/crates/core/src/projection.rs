// SPDX-License-Identifier: Apache-2.0

//! Sphere geometry: dual-fisheye → equirectangular (ERP) dewarp and ERP →
//! rectilinear (gnomonic) views.
//!
//! World frame: `x` right, `y` up, `z` forward. Longitude is
//! `atan2(x, z)` (positive to the right), latitude is `asin(y)`.
//! Raster coordinates are continuous with pixel `i` covering `[i, i + 1)`,
//! so its center sits at `i + 0.5`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intervals::{IntervalSet, Span};

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("pixel ({u}, {v}) outside {width}x{height}")]
    OutOfBounds { u: u32, v: u32, width: u32, height: u32 },
    #[error("invalid fisheye layout: {0}")]
    LayoutInvalid(String),
    #[error("invalid view spec: {0}")]
    ViewInvalid(String),
}

/// Stream a clip or detection comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Erp,
    Front,
    Right,
    Back,
    Left,
}

impl View {
    pub const ALL: [View; 5] = [View::Erp, View::Front, View::Right, View::Back, View::Left];

    pub fn as_str(&self) -> &'static str {
        match self {
            View::Erp => "erp",
            View::Front => "front",
            View::Right => "right",
            View::Back => "back",
            View::Left => "left",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        View::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown view {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction {
    pub fn from_lon_lat(lon: f64, lat: f64) -> Self {
        Self {
            x: lat.cos() * lon.sin(),
            y: lat.sin(),
            z: lat.cos() * lon.cos(),
        }
    }

    pub fn lon_lat(&self) -> (f64, f64) {
        let n = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        (self.x.atan2(self.z), (self.y / n).clamp(-1.0, 1.0).asin())
    }

    pub fn dot(&self, o: &Direction) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Rotation about the vertical axis; positive yaw turns forward into right.
    pub fn yawed(&self, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            x: self.x * c + self.z * s,
            y: self.y,
            z: -self.x * s + self.z * c,
        }
    }

    /// Rotation about the horizontal axis; positive pitch turns forward upward.
    pub fn pitched(&self, pitch: f64) -> Self {
        let (s, c) = pitch.sin_cos();
        Self {
            x: self.x,
            y: self.y * c + self.z * s,
            z: -self.y * s + self.z * c,
        }
    }
}

/// Center of ERP pixel `(u, v)` as (longitude, latitude) in radians.
pub fn erp_pixel_to_direction(
    u: u32,
    v: u32,
    width: u32,
    height: u32,
) -> Result<(f64, f64), ProjectionError> {
    if u >= width || v >= height {
        return Err(ProjectionError::OutOfBounds {
            u,
            v,
            width,
            height,
        });
    }
    let lon = 2.0 * PI * ((u as f64 + 0.5) / width as f64) - PI;
    let lat = FRAC_PI_2 - PI * ((v as f64 + 0.5) / height as f64);
    Ok((lon, lat))
}

/// Continuous ERP raster coordinates of a direction.
pub fn direction_to_erp_coords(lon: f64, lat: f64, width: u32, height: u32) -> (f64, f64) {
    let x = (lon + PI) / (2.0 * PI) * width as f64;
    let y = (FRAC_PI_2 - lat) / PI * height as f64;
    (x, y)
}

/// Bilinear sample at continuous coordinates. Columns wrap when `wrap_x`,
/// otherwise they clamp; rows always clamp.
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64, wrap_x: bool) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let col = |i: i64| -> u32 {
        if wrap_x {
            i.rem_euclid(w) as u32
        } else {
            i.clamp(0, w - 1) as u32
        }
    };
    let row = |j: i64| -> u32 { j.clamp(0, h - 1) as u32 };
    let (x0, y0) = (x0 as i64, y0 as i64);
    let p00 = img.get_pixel(col(x0), row(y0)).0;
    let p10 = img.get_pixel(col(x0 + 1), row(y0)).0;
    let p01 = img.get_pixel(col(x0), row(y0 + 1)).0;
    let p11 = img.get_pixel(col(x0 + 1), row(y0 + 1)).0;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
        let bot = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
        out[c] = top * (1.0 - ty) + bot * ty;
    }
    out
}

pub fn to_rgb8(c: [f64; 3]) -> Rgb<u8> {
    Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8))
}

/// Bilinear ERP sample in a given direction.
pub fn sample_erp(erp: &RgbImage, dir: &Direction) -> [f64; 3] {
    let (lon, lat) = dir.lon_lat();
    let (x, y) = direction_to_erp_coords(lon, lat, erp.width(), erp.height());
    sample_bilinear(erp, x, y, true)
}

/// One fisheye circle inside the dual-fisheye raster. `center_x`/`center_y`
/// are continuous raster coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisheyeLens {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
    pub fov_deg: f64,
    pub yaw_deg: f64,
}

impl FisheyeLens {
    /// Equidistant focal length: pixels per radian off-axis.
    pub fn focal(&self) -> f64 {
        self.radius / (self.fov_deg.to_radians() / 2.0)
    }

    pub fn axis(&self) -> Direction {
        Direction::from_lon_lat(self.yaw_deg.to_radians(), 0.0)
    }

    /// Continuous raster position of `dir`, or `None` outside the lens FOV.
    pub fn project(&self, dir: &Direction) -> Option<(f64, f64)> {
        let local = dir.yawed(-self.yaw_deg.to_radians());
        let n = (local.x * local.x + local.y * local.y + local.z * local.z).sqrt();
        let theta = (local.z / n).clamp(-1.0, 1.0).acos();
        if theta > self.fov_deg.to_radians() / 2.0 {
            return None;
        }
        let alpha = local.y.atan2(local.x);
        let r = self.focal() * theta;
        Some((self.center_x + r * alpha.cos(), self.center_y - r * alpha.sin()))
    }

    /// Inverse of [`project`](Self::project) for a raster position inside the circle.
    pub fn unproject(&self, x: f64, y: f64) -> Option<Direction> {
        let dx = x - self.center_x;
        let dy = self.center_y - y;
        let r = (dx * dx + dy * dy).sqrt();
        if r > self.radius {
            return None;
        }
        let theta = r / self.focal();
        let alpha = dy.atan2(dx);
        let local = Direction {
            x: theta.sin() * alpha.cos(),
            y: theta.sin() * alpha.sin(),
            z: theta.cos(),
        };
        Some(local.yawed(self.yaw_deg.to_radians()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisheyeLayout {
    pub lenses: [FisheyeLens; 2],
}

impl FisheyeLayout {
    /// Side-by-side layout for a `2r x 2r`-per-lens raster: front lens on the
    /// left half, back lens on the right half.
    pub fn side_by_side(lens_px: u32, fov_deg: f64) -> Self {
        let r = lens_px as f64 / 2.0;
        let lens = |cx: f64, yaw: f64| FisheyeLens {
            center_x: cx,
            center_y: r,
            radius: r,
            fov_deg,
            yaw_deg: yaw,
        };
        Self {
            lenses: [lens(r, 0.0), lens(3.0 * r, 180.0)],
        }
    }

    pub fn validate(&self, src_width: u32, src_height: u32) -> Result<(), ProjectionError> {
        for (i, l) in self.lenses.iter().enumerate() {
            if !(l.radius > 0.0) {
                return Err(ProjectionError::LayoutInvalid(format!("lens {i}: radius must be > 0")));
            }
            if !(l.fov_deg > 90.0 && l.fov_deg < 220.0) {
                return Err(ProjectionError::LayoutInvalid(format!(
                    "lens {i}: fov {} outside (90, 220)",
                    l.fov_deg
                )));
            }
            let eps = 1e-9;
            if l.center_x - l.radius < -eps
                || l.center_y - l.radius < -eps
                || l.center_x + l.radius > src_width as f64 + eps
                || l.center_y + l.radius > src_height as f64 + eps
            {
                return Err(ProjectionError::LayoutInvalid(format!(
                    "lens {i}: circle leaves the {src_width}x{src_height} raster"
                )));
            }
        }
        let diff = (self.lenses[0].yaw_deg - self.lenses[1].yaw_deg).rem_euclid(360.0);
        if (diff - 180.0).abs() > 1e-6 {
            return Err(ProjectionError::LayoutInvalid(
                "lenses must face opposite yaws".into(),
            ));
        }
        Ok(())
    }

    /// Lens whose optical axis is angularly closest to `dir` (ties → lens 0).
    pub fn nearest_lens(&self, dir: &Direction) -> &FisheyeLens {
        let d0 = dir.dot(&self.lenses[0].axis());
        let d1 = dir.dot(&self.lenses[1].axis());
        if d1 > d0 {
            &self.lenses[1]
        } else {
            &self.lenses[0]
        }
    }
}

/// A raster with its source timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedFrame {
    pub image: RgbImage,
    pub t_seconds: f64,
}

/// Dewarps one dual-fisheye frame to a full-sphere ERP. Each ERP pixel is
/// sampled from the nearest lens only; directions outside that lens' FOV
/// come out black.
pub fn dewarp_fisheye_to_erp(
    src: &TimedFrame,
    layout: &FisheyeLayout,
    out_width: u32,
    out_height: u32,
) -> Result<TimedFrame, ProjectionError> {
    layout.validate(src.image.width(), src.image.height())?;
    if out_width == 0 || out_height == 0 {
        return Err(ProjectionError::LayoutInvalid("empty output raster".into()));
    }
    let mut out = RgbImage::new(out_width, out_height);
    for v in 0..out_height {
        for u in 0..out_width {
            let (lon, lat) = erp_pixel_to_direction(u, v, out_width, out_height)?;
            let dir = Direction::from_lon_lat(lon, lat);
            let lens = layout.nearest_lens(&dir);
            let px = match lens.project(&dir) {
                Some((x, y)) => to_rgb8(sample_bilinear(&src.image, x, y, false)),
                None => Rgb([0, 0, 0]),
            };
            out.put_pixel(u, v, px);
        }
    }
    Ok(TimedFrame {
        image: out,
        t_seconds: src.t_seconds,
    })
}

/// Renders a dual-fisheye raster from an ERP using the same lens model.
/// Pixels outside both circles are black. Used to synthesize camera input.
pub fn render_dual_fisheye(
    erp: &TimedFrame,
    layout: &FisheyeLayout,
    width: u32,
    height: u32,
) -> Result<TimedFrame, ProjectionError> {
    layout.validate(width, height)?;
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            let dir = layout.lenses.iter().find_map(|l| l.unproject(cx, cy));
            if let Some(d) = dir {
                out.put_pixel(x, y, to_rgb8(sample_erp(&erp.image, &d)));
            }
        }
    }
    Ok(TimedFrame {
        image: out,
        t_seconds: erp.t_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub name: View,
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
    pub hfov_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl ViewSpec {
    /// Back, left, front and right views at 90° horizontal FOV.
    pub fn default_four(width: u32, height: u32) -> Vec<ViewSpec> {
        [
            (View::Back, 180.0),
            (View::Left, -90.0),
            (View::Front, 0.0),
            (View::Right, 90.0),
        ]
        .into_iter()
        .map(|(name, yaw_deg)| ViewSpec {
            name,
            yaw_deg,
            pitch_deg: 0.0,
            hfov_deg: 90.0,
            width,
            height,
        })
        .collect()
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        if self.name == View::Erp {
            return Err(ProjectionError::ViewInvalid("erp is not a rectilinear view".into()));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(ProjectionError::ViewInvalid(format!("hfov {}", self.hfov_deg)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ProjectionError::ViewInvalid("empty output raster".into()));
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    /// World direction of the ray through continuous view coordinates.
    pub fn ray(&self, x: f64, y: f64) -> Direction {
        let f = self.focal();
        let local = Direction {
            x: (x - self.width as f64 / 2.0) / f,
            y: (self.height as f64 / 2.0 - y) / f,
            z: 1.0,
        };
        local
            .pitched(self.pitch_deg.to_radians())
            .yawed(self.yaw_deg.to_radians())
    }
}

/// Gnomonic rendering of `spec` from an ERP frame.
pub fn render_rectilinear_view(
    erp: &TimedFrame,
    spec: &ViewSpec,
) -> Result<TimedFrame, ProjectionError> {
    spec.validate()?;
    let mut out = RgbImage::new(spec.width, spec.height);
    for j in 0..spec.height {
        for i in 0..spec.width {
            let d = spec.ray(i as f64 + 0.5, j as f64 + 0.5);
            out.put_pixel(i, j, to_rgb8(sample_erp(&erp.image, &d)));
        }
    }
    Ok(TimedFrame {
        image: out,
        t_seconds: erp.t_seconds,
    })
}

/// True when the horizontal footprints of `specs` cover every longitude.
pub fn views_cover_all_longitudes(specs: &[ViewSpec]) -> bool {
    let mut spans = Vec::new();
    for s in specs {
        let half = s.hfov_deg / 2.0;
        let start = (s.yaw_deg - half + 180.0).rem_euclid(360.0) - 180.0;
        let end = start + s.hfov_deg;
        if end > 180.0 {
            spans.push(Span::new(start, 180.0));
            spans.push(Span::new(-180.0, end - 360.0));
        } else {
            spans.push(Span::new(start, end));
        }
    }
    let set = IntervalSet::from_spans(spans);
    (set.total_len() - 360.0).abs() < 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erp_center_and_edges() {
        let (lon, lat) = erp_pixel_to_direction(2047, 1023, 4096, 2048).unwrap();
        // pixel 2047's center sits half a pixel left of the forward axis
        assert!((lon + PI / 4096.0).abs() < 1e-12);
        assert!((lat - PI / 2.0 / 2048.0).abs() < 1e-12);
        let (lon, _) = erp_pixel_to_direction(0, 0, 4096, 2048).unwrap();
        assert!((lon - (-PI + PI / 4096.0)).abs() < 1e-12);
        let (_, lat) = erp_pixel_to_direction(0, 0, 4096, 2048).unwrap();
        assert!((lat - (PI / 2.0 - PI / (2.0 * 2048.0))).abs() < 1e-12);
        assert!(matches!(
            erp_pixel_to_direction(4096, 0, 4096, 2048),
            Err(ProjectionError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn raster_center_maps_to_forward_axis() {
        // The geometric center of the raster (continuous 2048, 1024) is (0, 0).
        let (x, y) = direction_to_erp_coords(0.0, 0.0, 4096, 2048);
        assert_eq!((x, y), (2048.0, 1024.0));
    }

    #[test]
    fn lens_project_unproject_round_trip() {
        let l = FisheyeLayout::side_by_side(200, 190.0).lenses[1];
        for (lon, lat) in [(3.0, 0.1), (2.0, -0.7), (-2.5, 0.4)] {
            let d = Direction::from_lon_lat(lon, lat);
            let (x, y) = l.project(&d).unwrap();
            let back = l.unproject(x, y).unwrap();
            let (lon2, lat2) = back.lon_lat();
            assert!((lon - lon2).abs() < 1e-9 && (lat - lat2).abs() < 1e-9);
        }
    }

    #[test]
    fn layout_validation() {
        let good = FisheyeLayout::side_by_side(100, 190.0);
        good.validate(200, 100).unwrap();
        assert!(good.validate(150, 100).is_err());
        let mut bad = good.clone();
        bad.lenses[1].yaw_deg = 90.0;
        assert!(bad.validate(200, 100).is_err());
        let mut bad = good.clone();
        bad.lenses[0].fov_deg = 230.0;
        assert!(bad.validate(200, 100).is_err());
        let mut bad = good;
        bad.lenses[0].radius = 0.0;
        assert!(bad.validate(200, 100).is_err());
    }

    #[test]
    fn uniform_gray_stays_gray() {
        let layout = FisheyeLayout::side_by_side(64, 190.0);
        let src = TimedFrame {
            image: RgbImage::from_pixel(128, 64, Rgb([90, 90, 90])),
            t_seconds: 1.25,
        };
        // Black outside the circles only matters beyond the FOV; 190° lenses
        // leave no uncovered direction.
        let erp = dewarp_fisheye_to_erp(&src, &layout, 64, 32).unwrap();
        assert_eq!(erp.t_seconds, 1.25);
        let bad = erp.image.pixels().filter(|p| p.0 != [90, 90, 90]).count();
        assert_eq!(bad, 0);

        let view = render_rectilinear_view(&erp, &ViewSpec::default_four(33, 33)[2]).unwrap();
        assert!(view.image.pixels().all(|p| p.0 == [90, 90, 90]));
        assert_eq!(view.t_seconds, 1.25);
    }

    #[test]
    fn front_lens_center_maps_to_forward() {
        let layout = FisheyeLayout::side_by_side(128, 190.0);
        let mut img = RgbImage::from_pixel(256, 128, Rgb([10, 10, 10]));
        for y in 0..128 {
            for x in 0..128 {
                let (dx, dy) = (x as f64 + 0.5 - 64.0, y as f64 + 0.5 - 64.0);
                if dx * dx + dy * dy < 100.0 {
                    img.put_pixel(x, y, Rgb([200, 30, 60]));
                }
            }
        }
        let src = TimedFrame { image: img, t_seconds: 0.0 };
        let erp = dewarp_fisheye_to_erp(&src, &layout, 256, 128).unwrap();
        for (u, v) in [(127, 63), (128, 63), (127, 64), (128, 64)] {
            assert_eq!(erp.image.get_pixel(u, v).0, [200, 30, 60]);
        }
    }

    #[test]
    fn default_views_cover_all_longitudes() {
        let specs = ViewSpec::default_four(10, 10);
        assert!(views_cover_all_longitudes(&specs));
        assert!(!views_cover_all_longitudes(&specs[..3]));
    }

    #[test]
    fn view_round_trip_str() {
        for v in View::ALL {
            assert_eq!(v.as_str().parse::<View>().unwrap(), v);
        }
    }
}
