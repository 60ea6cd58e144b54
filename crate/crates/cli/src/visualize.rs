//! Trajectory overlays: each track as a polyline over the first frame, faint
//! at its start and solid at its end.

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use trec_core::TrackSet;

const KEPT: Rgb<u8> = Rgb([255, 40, 40]);
const DROPPED: Rgb<u8> = Rgb([150, 150, 150]);
const GAP: u32 = 4;

/// Draws `tracks` (pixel coordinates of `frame`) over `frame` enlarged by
/// `scale`. With `kept`, those tracks are highlighted and the rest greyed out.
pub fn overlay(frame: &RgbImage, tracks: &TrackSet, kept: Option<&[usize]>, scale: u32) -> RgbImage {
    let scale = scale.max(1);
    let mut img = imageops::resize(frame, frame.width() * scale, frame.height() * scale, FilterType::Nearest);
    // dim the frame so the tracks stand out
    for p in img.pixels_mut() {
        p.0 = p.0.map(|v| (u16::from(v) * 2 / 5) as u8);
    }
    let s = f64::from(scale);
    let at = |v: f64| (v + 0.5) * s - 0.5;
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    // highlighted tracks go on top
    if let Some(k) = kept {
        order.sort_by_key(|i| k.contains(i));
    }
    for i in order {
        let color = match kept {
            Some(k) if k.contains(&i) => KEPT,
            Some(_) => DROPPED,
            None => palette(i),
        };
        let track = tracks.track(i);
        let (c, vis) = (track.coords(), track.visible());
        let n = c.len();
        for t in 1..n {
            if vis[t - 1] && vis[t] {
                let alpha = 0.2 + 0.8 * t as f64 / (n - 1) as f64;
                line(&mut img, (at(c[t - 1].x), at(c[t - 1].y)), (at(c[t].x), at(c[t].y)), color, alpha);
            }
        }
        let end = c[n - 1];
        dot(&mut img, (at(end.x), at(end.y)), color, (scale / 2).max(1) as i64);
    }
    img
}

/// Unfiltered and filtered overlays side by side.
pub fn filtered_pair(frame: &RgbImage, tracks: &TrackSet, kept: &[usize], scale: u32) -> RgbImage {
    let left = overlay(frame, tracks, None, scale);
    let right = overlay(frame, tracks, Some(kept), scale);
    let mut out = RgbImage::from_pixel(left.width() * 2 + GAP, left.height(), Rgb([255, 255, 255]));
    imageops::replace(&mut out, &left, 0, 0);
    imageops::replace(&mut out, &right, i64::from(left.width() + GAP), 0);
    out
}

fn palette(i: usize) -> Rgb<u8> {
    let h = (i as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let c = |v: f64| (55.0 + 200.0 * v) as u8;
    Rgb([c(r), c(g), c(b)])
}

fn blend(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>, alpha: f64) {
    if x < 0 || y < 0 || x >= i64::from(img.width()) || y >= i64::from(img.height()) {
        return;
    }
    let p = img.get_pixel_mut(x as u32, y as u32);
    for (dst, src) in p.0.iter_mut().zip(color.0) {
        *dst = (f64::from(*dst) * (1.0 - alpha) + f64::from(src) * alpha).round() as u8;
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>, alpha: f64) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let f = k as f64 / steps as f64;
        let (x, y) = (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f);
        blend(img, x.round() as i64, y.round() as i64, color, alpha);
    }
}

fn dot(img: &mut RgbImage, c: (f64, f64), color: Rgb<u8>, r: i64) {
    let (cx, cy) = (c.0.round() as i64, c.1.round() as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            blend(img, cx + dx, cy + dy, color, 1.0);
        }
    }
}
