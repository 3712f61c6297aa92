//! PNG renderings of an analyzed network: class-colored overlay and thickness heatmap.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::topology::{ElementClass, ThicknessMap, VesselNetwork};

pub const SEGMENT_COLOR: [u8; 3] = [255, 220, 0];
pub const BRANCH_COLOR: [u8; 3] = [0, 200, 0];
pub const ISOLATED_COLOR: [u8; 3] = [20, 40, 170];
pub const MESH_COLOR: [u8; 3] = [0, 220, 220];
pub const NODE_COLOR: [u8; 3] = [230, 30, 30];
const SUPPRESSED_COLOR: [u8; 3] = [120, 120, 120];

fn encode(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

fn blend(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let mix = |x: u8, y: u8| (x as f64 * (1.0 - t) + y as f64 * t).round() as u8;
    [mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])]
}

pub fn class_color(class: ElementClass) -> [u8; 3] {
    match class {
        ElementClass::Segment => SEGMENT_COLOR,
        ElementClass::Branch => BRANCH_COLOR,
        ElementClass::Isolated => ISOLATED_COLOR,
    }
}

/// Overlay on a darkened copy of `base`. Curated-out elements are drawn at 30% opacity,
/// twig-suppressed ones in gray.
pub fn render_overlay(base: &GrayImage, net: &VesselNetwork) -> Result<Vec<u8>> {
    if base.width() != net.width || base.height() != net.height {
        return Err(Error::DimensionMismatch("overlay base and network differ in size".into()));
    }
    let (w, h) = (net.width as u32, net.height as u32);
    let mut out = RgbImage::from_fn(w, h, |x, y| {
        let v = (base.get(x as usize, y as usize) * 0.6 * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    for mesh in &net.meshes {
        for &(x, y) in &mesh.outline {
            out.put_pixel(x as u32, y as u32, Rgb(MESH_COLOR));
        }
    }
    for e in &net.elements {
        for &(x, y) in &e.path {
            let under = out.get_pixel(x as u32, y as u32).0;
            let c = if e.suppressed {
                SUPPRESSED_COLOR
            } else if e.curated_out {
                blend(under, class_color(e.class), 0.3)
            } else {
                class_color(e.class)
            };
            out.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }
    for node in &net.nodes {
        let r = (node.diameter_um / net.calibration.pixel_size_um / 2.0).max(2.0);
        draw_circle(&mut out, node.centroid, r, NODE_COLOR);
    }
    encode(&out)
}

fn draw_circle(img: &mut RgbImage, (cx, cy): (f64, f64), r: f64, color: [u8; 3]) {
    let steps = ((std::f64::consts::TAU * r).ceil() as usize * 2).max(16);
    for i in 0..steps {
        let t = std::f64::consts::TAU * i as f64 / steps as f64;
        let x = (cx + r * t.cos()).round();
        let y = (cy + r * t.sin()).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

const RAMP: [[u8; 3]; 5] = [[48, 18, 120], [40, 110, 190], [30, 180, 140], [170, 220, 50], [250, 240, 30]];

/// Maps `t` in [0, 1] onto a perceptually ordered blue-green-yellow ramp.
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    blend(RAMP[i], RAMP[i + 1], t - i as f64)
}

// 3×5 bitmaps for 0-9, rows top to bottom, 3 bits per row
const DIGITS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];

fn draw_number(img: &mut RgbImage, x0: u32, y0: u32, value: u32, scale: u32) {
    for (k, ch) in value.to_string().bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let x = x0 + (k as u32 * 4 + col) * scale + dx;
                            let y = y0 + row as u32 * scale + dy;
                            if x < img.width() && y < img.height() {
                                img.put_pixel(x, y, Rgb([255, 255, 255]));
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Heatmap of local thickness with a vertical color bar labelled in micrometres.
pub fn render_heatmap(thick: &ThicknessMap) -> Result<Vec<u8>> {
    let (w, h) = (thick.width() as u32, thick.height() as u32);
    let max = thick.max_um();
    let scale = (h / 160).clamp(1, 4);
    let label_w = 4 * 4 * scale;
    let bar_w = 8 * scale;
    let pad = 4 * scale;
    let total_w = w + pad + bar_w + pad + label_w;
    let mut out = RgbImage::new(total_w, h);
    for y in 0..h {
        for x in 0..w {
            let v = thick.get(x as usize, y as usize);
            if v > 0.0 {
                out.put_pixel(x, y, Rgb(heat_color(v / max.max(f64::MIN_POSITIVE))));
            }
        }
    }
    let margin = 5 * scale;
    let bar_h = h.saturating_sub(2 * margin).max(1);
    for i in 0..bar_h {
        let t = 1.0 - i as f64 / (bar_h.max(2) - 1) as f64;
        for dx in 0..bar_w {
            out.put_pixel(w + pad + dx, (margin + i).min(h - 1), Rgb(heat_color(t)));
        }
    }
    let lx = w + pad + bar_w + pad;
    draw_number(&mut out, lx, 0, max.round() as u32, scale);
    draw_number(&mut out, lx, h.saturating_sub(5 * scale), 0, scale);
    if h >= 40 * scale {
        draw_number(&mut out, lx, h / 2 - 2 * scale, (max / 2.0).round() as u32, scale);
    }
    encode(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Calibration;
    use crate::segment::BinaryMask;
    use crate::topology::{extract_network, local_thickness, skeletonize};

    #[test]
    fn overlay_uses_class_colors() {
        let cal = Calibration::new(1.0).unwrap();
        let mask = BinaryMask::from_fn(64, 64, cal, |x, y| (30..34).contains(&y) || ((30..34).contains(&x) && y < 50));
        let skel = skeletonize(&mask).unwrap();
        let thick = local_thickness(&mask).unwrap();
        let net = extract_network(&skel, &thick, 0.0).unwrap();
        let base = GrayImage::from_fn(64, 64, cal, |_, _| 0.5).unwrap();
        let png = render_overlay(&base, &net).unwrap();
        let img = image::load_from_memory(&png).unwrap().to_rgb8();
        let e = net.elements.iter().find(|e| e.class == ElementClass::Branch).unwrap();
        let far = e.path.iter().max_by_key(|p| (p.0 as i64 - 32).abs() + (p.1 as i64 - 32).abs()).unwrap();
        assert_eq!(img.get_pixel(far.0 as u32, far.1 as u32).0, BRANCH_COLOR);
        assert_eq!(render_overlay(&base, &net).unwrap(), png);
    }

    #[test]
    fn heatmap_has_color_bar() {
        let cal = Calibration::new(2.0).unwrap();
        let mask = BinaryMask::from_fn(80, 80, cal, |x, _| (20..33).contains(&x));
        let thick = local_thickness(&mask).unwrap();
        let img = image::load_from_memory(&render_heatmap(&thick).unwrap()).unwrap().to_rgb8();
        assert!(img.width() > 80);
        assert_eq!(img.get_pixel(5, 40).0, [0, 0, 0]);
        assert_ne!(img.get_pixel(26, 40).0, [0, 0, 0]);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(heat_color(0.0), RAMP[0]);
        assert_eq!(heat_color(1.0), RAMP[4]);
        assert_eq!(heat_color(7.0), RAMP[4]);
    }
}
