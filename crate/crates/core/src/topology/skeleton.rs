use crate::error::{Error, Result};
use crate::image::Calibration;
use crate::segment::BinaryMask;

/// One-pixel-wide centerline field with the calibration of its source mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) bits: Vec<bool>,
    pub(crate) calibration: Calibration,
    pub(crate) effective_area_px: usize,
}

impl Skeleton {
    /// Wraps an existing centerline raster without thinning it.
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>, calibration: Calibration) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch("skeleton raster size".into()));
        }
        Ok(Self { width, height, bits, calibration, effective_area_px: width * height })
    }

    pub fn with_effective_area(mut self, area_px: usize) -> Self {
        self.effective_area_px = area_px.min(self.width * self.height);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration
    }

    pub fn effective_area_px(&self) -> usize {
        self.effective_area_px
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// 8-neighbour offsets starting east, counter-clockwise (y grows downwards).
pub(crate) const RING: [(isize, isize); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

#[inline]
fn at(bits: &[bool], w: usize, h: usize, x: isize, y: isize) -> bool {
    x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && bits[y as usize * w + x as usize]
}

fn neighbours(bits: &[bool], w: usize, h: usize, x: usize, y: usize) -> [bool; 8] {
    let mut n = [false; 8];
    for (k, (dx, dy)) in RING.iter().enumerate() {
        n[k] = at(bits, w, h, x as isize + dx, y as isize + dy);
    }
    n
}

/// Yokoi connectivity number for 8-connected foreground. A foreground pixel is simple (its
/// removal changes neither the component nor the hole count) exactly when this equals 1.
fn connectivity_number(n: &[bool; 8]) -> u32 {
    let c = |k: usize| u32::from(!n[k % 8]);
    [0usize, 2, 4, 6].iter().map(|&k| c(k) - c(k) * c(k + 1) * c(k + 2)).sum()
}

/// Topology-preserving thinning.
///
/// Each iteration runs four directional sub-passes (north, south, east, west). A sub-pass
/// first collects the foreground pixels whose 4-neighbour in that direction is background,
/// then deletes them one at a time in raster order if they are still simple and are not line
/// ends. Since every deletion is checked against the current raster, connected components
/// and holes are preserved.
pub fn skeletonize(mask: &BinaryMask) -> Result<Skeleton> {
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let (w, h) = (mask.width(), mask.height());
    let mut bits = mask.bits().to_vec();
    let dirs = [(0isize, -1isize), (0, 1), (1, 0), (-1, 0)];
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for &(dx, dy) in &dirs {
            candidates.clear();
            for y in 0..h {
                for x in 0..w {
                    if bits[y * w + x] && !at(&bits, w, h, x as isize + dx, y as isize + dy) {
                        candidates.push((x, y));
                    }
                }
            }
            for &(x, y) in &candidates {
                let n = neighbours(&bits, w, h, x, y);
                let count = n.iter().filter(|&&b| b).count();
                if count <= 1 {
                    continue;
                }
                if connectivity_number(&n) == 1 {
                    bits[y * w + x] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Skeleton {
        width: w,
        height: h,
        bits,
        calibration: mask.calibration(),
        effective_area_px: mask.effective_area_px(),
    })
}

/// Number of foreground 8-neighbours of each pixel (0 for background pixels).
pub(crate) fn degree_map(bits: &[bool], w: usize, h: usize) -> Vec<u8> {
    let mut deg = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            if bits[y * w + x] {
                deg[y * w + x] = neighbours(bits, w, h, x, y).iter().filter(|&&b| b).count() as u8;
            }
        }
    }
    deg
}
