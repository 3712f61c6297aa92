//! Calibrated grayscale images: loading, saving, region-of-interest selection and resampling.
//!
//! Intensities are held as `f64` in `[0, 1]`, rescaled from the container bit depth at load
//! time, so every downstream threshold is independent of how the image was stored.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest side length accepted for analysis.
pub const MIN_ANALYSIS_SIDE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Micrometers per pixel, identical along both axes.
    pub pixel_size_um: f64,
    /// Depth range of the projection, kept as metadata only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axial_span_um: Option<f64>,
}

impl Calibration {
    pub fn new(pixel_size_um: f64) -> Result<Self> {
        if !(pixel_size_um.is_finite() && pixel_size_um > 0.0) {
            return Err(Error::InvalidCalibration(format!(
                "pixel size must be positive, got {pixel_size_um}"
            )));
        }
        Ok(Self { pixel_size_um, axial_span_um: None })
    }

    pub fn with_axial_span(mut self, axial_span_um: f64) -> Self {
        self.axial_span_um = Some(axial_span_um);
        self
    }

    /// Reads a sidecar file of the form `{ "pixel_size_um": 4.0 }`.
    pub fn from_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cal: Calibration = serde_json::from_str(&text)?;
        Calibration::new(cal.pixel_size_um).map(|c| Self { axial_span_um: cal.axial_span_um, ..c })
    }

    /// `image.png` -> `image.json`.
    pub fn sidecar_path(image_path: impl AsRef<Path>) -> PathBuf {
        image_path.as_ref().with_extension("json")
    }
}

/// A 2-D scalar intensity field with values in `[0, 1]`.
///
/// An optional analysis region marks which pixels belong to the area being quantified; it is
/// set by circular ROI selection and propagated through every filter so that density metrics
/// divide by the right area.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    calibration: Calibration,
    region: Option<Vec<bool>>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, calibration: Calibration) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::TooSmall { width, height, min: 1 });
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
            return Err(Error::InvalidIntensity);
        }
        Ok(Self { width, height, pixels, calibration, region: None })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        calibration: Calibration,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels, calibration)
    }

    /// Same geometry, calibration and region; values are clamped into `[0, 1]`.
    pub(crate) fn with_pixels(&self, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        let pixels = pixels
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Self { pixels, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: Vec::new(),
            calibration: self.calibration,
            region: self.region.clone(),
        }
    }

    pub fn with_region(mut self, region: Option<Vec<bool>>) -> Result<Self> {
        if let Some(r) = &region {
            if r.len() != self.pixels.len() {
                return Err(Error::DimensionMismatch("region size differs from image".into()));
            }
        }
        self.region = region;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration
    }

    pub fn region(&self) -> Option<&[bool]> {
        self.region.as_deref()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn in_region(&self, idx: usize) -> bool {
        self.region.as_ref().is_none_or(|r| r[idx])
    }

    /// Number of pixels in the analysis area.
    pub fn effective_area_px(&self) -> usize {
        match &self.region {
            Some(r) => r.iter().filter(|&&b| b).count(),
            None => self.pixels.len(),
        }
    }

    /// Intensities of the pixels inside the analysis area.
    pub(crate) fn region_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().enumerate().filter(|(i, _)| self.in_region(*i)).map(|(_, &v)| v)
    }

    pub(crate) fn check_analysis_size(&self) -> Result<()> {
        if self.width < MIN_ANALYSIS_SIDE || self.height < MIN_ANALYSIS_SIDE {
            return Err(Error::TooSmall { width: self.width, height: self.height, min: MIN_ANALYSIS_SIDE });
        }
        Ok(())
    }
}

/// Storage depth used when writing an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Loads an 8- or 16-bit single-channel PNG or TIFF.
pub fn load_image(path: impl AsRef<Path>, calibration: Calibration) -> Result<GrayImage> {
    let path = path.as_ref();
    let unreadable = |message: String| Error::Unreadable { path: path.to_path_buf(), message };
    let reader = ImageReader::open(path)
        .map_err(|e| unreadable(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| unreadable(e.to_string()))?;
    let decoded = reader.decode().map_err(|e| unreadable(e.to_string()))?;
    from_dynamic(decoded, calibration)
}

/// Same as [`load_image`] for an in-memory file.
pub fn decode_image(bytes: &[u8], calibration: Calibration) -> Result<GrayImage> {
    let unreadable = |message: String| Error::Unreadable { path: PathBuf::from("<memory>"), message };
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| unreadable(e.to_string()))?;
    let decoded = reader.decode().map_err(|e| unreadable(e.to_string()))?;
    from_dynamic(decoded, calibration)
}

fn from_dynamic(img: DynamicImage, calibration: Calibration) -> Result<GrayImage> {
    let (width, height) = (img.width() as usize, img.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::TooSmall { width, height, min: MIN_ANALYSIS_SIDE });
    }
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => return Err(Error::UnsupportedLayout(format!("{:?}", other.color()))),
    };
    let img = GrayImage::new(width, height, pixels, calibration)?;
    img.check_analysis_size()?;
    Ok(img)
}

/// Loads an image sampled on an anisotropic grid and resamples it to isotropic pixels at the
/// finer of the two pitches.
pub fn load_anisotropic(path: impl AsRef<Path>, pitch_x_um: f64, pitch_y_um: f64) -> Result<GrayImage> {
    let fine = pitch_x_um.min(pitch_y_um);
    let raw = load_image(path, Calibration::new(fine)?)?;
    make_isotropic(&raw, pitch_x_um, pitch_y_um)
}

/// Bilinear stretch of each axis so both pitches equal the finer one.
pub fn make_isotropic(img: &GrayImage, pitch_x_um: f64, pitch_y_um: f64) -> Result<GrayImage> {
    Calibration::new(pitch_x_um)?;
    Calibration::new(pitch_y_um)?;
    let fine = pitch_x_um.min(pitch_y_um);
    let (fx, fy) = (pitch_x_um / fine, pitch_y_um / fine);
    let w = (img.width as f64 * fx).round() as usize;
    let h = (img.height as f64 * fy).round() as usize;
    let cal = Calibration { pixel_size_um: fine, axial_span_um: img.calibration.axial_span_um };
    let out = bilinear(img, w, h, fx, fy, cal);
    out.check_analysis_size()?;
    Ok(out)
}

pub fn encode_png(img: &GrayImage, depth: BitDepth) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_dynamic(img, depth)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Writes PNG or TIFF depending on the file extension.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("tif") | Some("tiff") => ImageFormat::Tiff,
        _ => ImageFormat::Png,
    };
    to_dynamic(img, depth)
        .save_with_format(path, format)
        .map_err(|e| Error::Encode(e.to_string()))
}

fn to_dynamic(img: &GrayImage, depth: BitDepth) -> DynamicImage {
    let (w, h) = (img.width as u32, img.height as u32);
    match depth {
        BitDepth::Eight => {
            let raw = img.pixels.iter().map(|v| (v * 255.0).round() as u8).collect();
            DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("buffer size"))
        }
        BitDepth::Sixteen => {
            let raw = img.pixels.iter().map(|v| (v * 65535.0).round() as u16).collect();
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("buffer size"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum RoiSpec {
    Rectangle { x: usize, y: usize, width: usize, height: usize },
    /// Disk of pixels with `dx² + dy² ≤ radius²` around the center pixel.
    Circle { cx: usize, cy: usize, radius: usize },
}

/// Crops to the ROI. Circles keep their bounding box, zero the pixels outside the disk and
/// record the disk as the analysis region. Calibration is unchanged.
pub fn select_roi(img: &GrayImage, roi: &RoiSpec) -> Result<GrayImage> {
    let oob = || Error::RoiOutOfBounds { width: img.width, height: img.height };
    let (x0, y0, w, h) = match *roi {
        RoiSpec::Rectangle { x, y, width, height } => (x, y, width, height),
        RoiSpec::Circle { cx, cy, radius } => {
            if cx < radius || cy < radius {
                return Err(oob());
            }
            (cx - radius, cy - radius, 2 * radius + 1, 2 * radius + 1)
        }
    };
    if w == 0 || h == 0 || x0 + w > img.width || y0 + h > img.height {
        return Err(oob());
    }
    let mut pixels = Vec::with_capacity(w * h);
    let mut region = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let src = (y0 + y) * img.width + x0 + x;
            let inside = match *roi {
                RoiSpec::Rectangle { .. } => true,
                RoiSpec::Circle { radius, .. } => {
                    let (dx, dy) = (x as i64 - radius as i64, y as i64 - radius as i64);
                    dx * dx + dy * dy <= (radius * radius) as i64
                }
            } && img.in_region(src);
            pixels.push(if inside { img.pixels[src] } else { 0.0 });
            region.push(inside);
        }
    }
    let keep_region = matches!(roi, RoiSpec::Circle { .. }) || img.region.is_some();
    Ok(GrayImage {
        width: w,
        height: h,
        pixels,
        calibration: img.calibration,
        region: keep_region.then_some(region),
    })
}

/// Bilinear resampling by `factor` (2 doubles the pixel count along each axis).
pub fn resample(img: &GrayImage, factor: f64) -> Result<GrayImage> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::InvalidParameter(format!("resample factor must be positive, got {factor}")));
    }
    let w = (img.width as f64 * factor).round() as usize;
    let h = (img.height as f64 * factor).round() as usize;
    if w < MIN_ANALYSIS_SIDE || h < MIN_ANALYSIS_SIDE {
        return Err(Error::TooSmall { width: w, height: h, min: MIN_ANALYSIS_SIDE });
    }
    let cal = Calibration { pixel_size_um: img.calibration.pixel_size_um / factor, ..img.calibration };
    Ok(bilinear(img, w, h, factor, factor, cal))
}

/// Pixel-center aligned bilinear interpolation: output pixel `x` samples source coordinate
/// `(x + 0.5) / scale - 0.5`, clamped to the image.
fn bilinear(img: &GrayImage, w: usize, h: usize, scale_x: f64, scale_y: f64, cal: Calibration) -> GrayImage {
    let axis = |n_out: usize, n_in: usize, scale: f64| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) / scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(w, img.width, scale_x);
    let ys = axis(h, img.height, scale_y);
    let mut pixels = Vec::with_capacity(w * h);
    let mut region = img.region.as_ref().map(|_| Vec::with_capacity(w * h));
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let p = |x: usize, y: usize| img.pixels[y * img.width + x];
            let top = p(x0, y0) + tx * (p(x1, y0) - p(x0, y0));
            let bottom = p(x0, y1) + tx * (p(x1, y1) - p(x0, y1));
            pixels.push((top + ty * (bottom - top)).clamp(0.0, 1.0));
            if let (Some(out), Some(src)) = (region.as_mut(), img.region.as_ref()) {
                let nx = if tx < 0.5 { x0 } else { x1 };
                let ny = if ty < 0.5 { y0 } else { y1 };
                out.push(src[ny * img.width + nx]);
            }
        }
    }
    GrayImage { width: w, height: h, pixels, calibration: cal, region }
}
