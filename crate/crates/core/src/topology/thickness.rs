use crate::error::{Error, Result};
use crate::image::Calibration;
use crate::segment::BinaryMask;

/// Per-pixel local diameter in micrometers, zero outside the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ThicknessMap {
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) values_um: Vec<f64>,
    pub(crate) calibration: Calibration,
}

impl ThicknessMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values_um(&self) -> &[f64] {
        &self.values_um
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values_um[y * self.width + x]
    }

    pub fn max_um(&self) -> f64 {
        self.values_um.iter().copied().fold(0.0, f64::max)
    }
}

const INF: i64 = 1 << 42;

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn dt_1d(f: &[i64], out: &mut [i64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let key = |i: usize| (f[i] + (i * i) as i64) as f64;
    for q in 1..n {
        let mut s = (key(q) - key(v[k])) / (2.0 * (q - v[k]) as f64);
        while s <= z[k] {
            k -= 1;
            s = (key(q) - key(v[k])) / (2.0 * (q - v[k]) as f64);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as i64 - v[k] as i64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every grid point to the nearest site.
fn squared_distance_to_sites(sites: &[bool], w: usize, h: usize) -> Vec<i64> {
    let mut grid: Vec<i64> = sites.iter().map(|&s| if s { 0 } else { INF }).collect();
    let n = w.max(h);
    let (mut f, mut out) = (vec![0i64; n], vec![0i64; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0f64; n + 1]);
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        dt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        dt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// Local thickness: the diameter of the largest disk that fits in the mask and covers the
/// pixel.
///
/// A center `c` whose nearest background pixel center (everything outside the image counts
/// as background) lies at distance `R` supports the open disk of pixels closer than `R`,
/// the largest disk of mask pixels around `c`. Its diameter is `2R - 1` pixels, so a band of
/// odd width `n` reads exactly `n` and an even one `n - 1`. Centers whose disk lies within a
/// neighbour's disk are skipped before painting.
pub fn local_thickness(mask: &BinaryMask) -> Result<ThicknessMap> {
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let (w, h) = (mask.width(), mask.height());
    let bits = mask.bits();
    let (pw, ph) = (w + 2, h + 2);
    let mut sites = vec![true; pw * ph];
    for y in 0..h {
        for x in 0..w {
            sites[(y + 1) * pw + x + 1] = !bits[y * w + x];
        }
    }
    let padded = squared_distance_to_sites(&sites, pw, ph);
    let d2: Vec<i64> = (0..w * h).map(|i| padded[(i / w + 1) * pw + i % w + 1]).collect();
    let radius: Vec<f64> = d2.iter().map(|&v| (v as f64).sqrt()).collect();

    let mut centers = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if d2[i] == 0 {
                continue;
            }
            let r = radius[i];
            let dominated = super::skeleton::RING.iter().any(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    return false;
                }
                let step = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                radius[ny as usize * w + nx as usize] >= r + step
            });
            if !dominated {
                centers.push(i);
            }
        }
    }
    centers.sort_by(|&a, &b| d2[b].cmp(&d2[a]).then(a.cmp(&b)));

    let mut diam_px = vec![0.0f64; w * h];
    for &c in &centers {
        let (cx, cy) = ((c % w) as isize, (c / w) as isize);
        let r2 = d2[c];
        let value = 2.0 * radius[c] - 1.0;
        let reach = radius[c].ceil() as isize;
        for y in (cy - reach).max(0)..=(cy + reach).min(h as isize - 1) {
            let dy = y - cy;
            for x in (cx - reach).max(0)..=(cx + reach).min(w as isize - 1) {
                let dx = x - cx;
                if ((dx * dx + dy * dy) as i64) >= r2 {
                    continue;
                }
                let slot = &mut diam_px[y as usize * w + x as usize];
                if value > *slot {
                    *slot = value;
                }
            }
        }
    }
    let px = mask.calibration().pixel_size_um;
    Ok(ThicknessMap {
        width: w,
        height: h,
        values_um: diam_px.into_iter().map(|d| d * px).collect(),
        calibration: mask.calibration(),
    })
}
