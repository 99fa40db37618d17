//! Sliding-window texture descriptors for the comparison baselines:
//! GLCM/Haralick statistics, Sobel edge statistics, HOG, and uniform LBP
//! histograms, each producing a per-pixel feature map.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imagery::Image;
use crate::superpixel::FeatureMap;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid window spec: {0}")]
    InvalidWindow(String),
    #[error("invalid GLCM spec: {0}")]
    InvalidGlcm(String),
    #[error("shape mismatch between feature maps")]
    ShapeMismatch,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

/// Sliding-window geometry with reflect padding.
#[derive(Debug, Clone, Copy)]
pub struct WindowSpec {
    pub radius: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { radius: 8, stride: 1 }
    }
}

impl WindowSpec {
    fn validate(&self) -> Result<(), FeatureError> {
        if self.radius == 0 {
            return Err(FeatureError::InvalidWindow("radius must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(FeatureError::InvalidWindow("stride must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GlcmSpec {
    pub gray_levels: usize,
    pub offsets: Vec<(i32, i32)>,
    pub symmetric: bool,
}

impl Default for GlcmSpec {
    fn default() -> Self {
        GlcmSpec {
            gray_levels: 16,
            offsets: vec![(1, 0), (0, 1), (1, 1), (1, -1)],
            symmetric: true,
        }
    }
}

// symmetric reflect: -1 -> 0, n -> n-1
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

#[inline]
fn px(img: &Image, y: isize, x: isize) -> f64 {
    img.pixels[reflect(y, img.height) * img.width + reflect(x, img.width)]
}

/// Fills non-strided positions from the nearest computed grid position.
fn fill_stride(map: &mut FeatureMap, stride: usize) {
    if stride == 1 {
        return;
    }
    let (h, w, dim) = (map.height, map.width, map.dim);
    for y in 0..h {
        for x in 0..w {
            let sy = (y / stride) * stride;
            let sx = (x / stride) * stride;
            if sy == y && sx == x {
                continue;
            }
            let src = (sy * w + sx) * dim;
            let dst = (y * w + x) * dim;
            for d in 0..dim {
                map.values[dst + d] = map.values[src + d];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// GLCM / Haralick

/// Per-pixel Haralick statistics (contrast, correlation, energy,
/// homogeneity) of the windowed gray-level co-occurrence matrix, averaged
/// over the configured offsets. dim = 4.
pub fn glcm_haralick(
    img: &Image,
    win: &WindowSpec,
    spec: &GlcmSpec,
) -> Result<FeatureMap, FeatureError> {
    win.validate()?;
    if spec.gray_levels < 2 {
        return Err(FeatureError::InvalidGlcm("gray_levels must be >= 2".into()));
    }
    if spec.offsets.is_empty() {
        return Err(FeatureError::InvalidGlcm("offsets must be non-empty".into()));
    }
    let (h, w) = (img.height, img.width);
    let g = spec.gray_levels;
    // global-range quantization of the whole (padded) image
    let quant: Vec<usize> = img
        .pixels
        .iter()
        .map(|&v| ((v * g as f64) as usize).min(g - 1))
        .collect();
    let q = |y: isize, x: isize| quant[reflect(y, h) * w + reflect(x, w)];

    let mut out = FeatureMap::zeros(h, w, 4);
    let r = win.radius as isize;
    let side = 2 * win.radius + 1;
    let mut glcm = vec![0.0f64; g * g];
    for cy in (0..h).step_by(win.stride) {
        for cx in (0..w).step_by(win.stride) {
            let mut feats = [0.0f64; 4];
            for &(dx, dy) in &spec.offsets {
                for v in glcm.iter_mut() {
                    *v = 0.0;
                }
                let mut total = 0.0f64;
                // pairs with both endpoints inside the window grid
                for wy in 0..side as isize {
                    for wx in 0..side as isize {
                        let (ny, nx) = (wy + dy as isize, wx + dx as isize);
                        if ny < 0 || nx < 0 || ny >= side as isize || nx >= side as isize {
                            continue;
                        }
                        let a = q(cy as isize - r + wy, cx as isize - r + wx);
                        let b = q(cy as isize - r + ny, cx as isize - r + nx);
                        glcm[a * g + b] += 1.0;
                        total += 1.0;
                        if spec.symmetric {
                            glcm[b * g + a] += 1.0;
                            total += 1.0;
                        }
                    }
                }
                if total > 0.0 {
                    let inv = 1.0 / total;
                    for v in glcm.iter_mut() {
                        *v *= inv;
                    }
                }
                let (contrast, correlation, energy, homogeneity) = haralick_stats(&glcm, g);
                feats[0] += contrast;
                feats[1] += correlation;
                feats[2] += energy;
                feats[3] += homogeneity;
            }
            let inv = 1.0 / spec.offsets.len() as f64;
            let dst = out.at_mut(cy, cx);
            for d in 0..4 {
                dst[d] = feats[d] * inv;
            }
        }
    }
    fill_stride(&mut out, win.stride);
    Ok(out)
}

fn haralick_stats(p: &[f64], g: usize) -> (f64, f64, f64, f64) {
    let mut contrast = 0.0;
    let mut energy = 0.0;
    let mut homogeneity = 0.0;
    let mut mu_i = 0.0;
    let mut mu_j = 0.0;
    for i in 0..g {
        for j in 0..g {
            let v = p[i * g + j];
            if v == 0.0 {
                continue;
            }
            let d = i as f64 - j as f64;
            contrast += v * d * d;
            energy += v * v;
            homogeneity += v / (1.0 + d.abs());
            mu_i += i as f64 * v;
            mu_j += j as f64 * v;
        }
    }
    let mut var_i = 0.0;
    let mut var_j = 0.0;
    let mut cov = 0.0;
    for i in 0..g {
        for j in 0..g {
            let v = p[i * g + j];
            if v == 0.0 {
                continue;
            }
            var_i += (i as f64 - mu_i).powi(2) * v;
            var_j += (j as f64 - mu_j).powi(2) * v;
            cov += (i as f64 - mu_i) * (j as f64 - mu_j) * v;
        }
    }
    let denom = (var_i * var_j).sqrt();
    let correlation = if denom < 1e-12 { 0.0 } else { cov / denom };
    (contrast, correlation, energy, homogeneity)
}

// ---------------------------------------------------------------------------
// Sobel

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Per-pixel gradient magnitude from 3x3 Sobel kernels.
pub fn sobel_magnitude(img: &Image) -> Vec<f64> {
    let (h, w) = (img.height, img.width);
    let mut mag = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let v = px(img, y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                    gx += SOBEL_X[ky][kx] * v;
                    gy += SOBEL_Y[ky][kx] * v;
                }
            }
            mag[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    mag
}

/// Per-window (mean, std) of the Sobel gradient magnitude. dim = 2.
pub fn sobel_features(img: &Image, win: &WindowSpec) -> Result<FeatureMap, FeatureError> {
    win.validate()?;
    let (h, w) = (img.height, img.width);
    let mag = sobel_magnitude(img);
    let m = |y: isize, x: isize| mag[reflect(y, h) * w + reflect(x, w)];
    let mut out = FeatureMap::zeros(h, w, 2);
    let r = win.radius as isize;
    let count = ((2 * win.radius + 1) * (2 * win.radius + 1)) as f64;
    for cy in (0..h).step_by(win.stride) {
        for cx in (0..w).step_by(win.stride) {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = m(cy as isize + dy, cx as isize + dx);
                    s += v;
                    s2 += v * v;
                }
            }
            let mean = s / count;
            let var = (s2 / count - mean * mean).max(0.0);
            let dst = out.at_mut(cy, cx);
            dst[0] = mean;
            dst[1] = var.sqrt();
        }
    }
    fill_stride(&mut out, win.stride);
    Ok(out)
}

// ---------------------------------------------------------------------------
// HOG

/// Per-window unsigned-orientation histogram of gradient angles weighted by
/// magnitude, L2-normalized with epsilon 1e-6. dim = bins.
pub fn hog_features(
    img: &Image,
    win: &WindowSpec,
    bins: usize,
) -> Result<FeatureMap, FeatureError> {
    win.validate()?;
    if bins < 2 {
        return Err(FeatureError::InvalidWindow("bins must be >= 2".into()));
    }
    let (h, w) = (img.height, img.width);
    // central-difference gradients
    let mut grad_bin = vec![0usize; h * w];
    let mut grad_mag = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let gx = px(img, y as isize, x as isize + 1) - px(img, y as isize, x as isize - 1);
            let gy = px(img, y as isize + 1, x as isize) - px(img, y as isize - 1, x as isize);
            let mag = (gx * gx + gy * gy).sqrt();
            let mut angle = gy.atan2(gx);
            if angle < 0.0 {
                angle += std::f64::consts::PI;
            }
            if angle >= std::f64::consts::PI {
                angle -= std::f64::consts::PI;
            }
            let b = ((angle / std::f64::consts::PI) * bins as f64) as usize;
            grad_bin[y * w + x] = b.min(bins - 1);
            grad_mag[y * w + x] = mag;
        }
    }
    let gb = |y: isize, x: isize| grad_bin[reflect(y, h) * w + reflect(x, w)];
    let gm = |y: isize, x: isize| grad_mag[reflect(y, h) * w + reflect(x, w)];

    let eps = 1e-6f64;
    let mut out = FeatureMap::zeros(h, w, bins);
    let r = win.radius as isize;
    let mut hist = vec![0.0f64; bins];
    for cy in (0..h).step_by(win.stride) {
        for cx in (0..w).step_by(win.stride) {
            for v in hist.iter_mut() {
                *v = 0.0;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    hist[gb(cy as isize + dy, cx as isize + dx)] +=
                        gm(cy as isize + dy, cx as isize + dx);
                }
            }
            let norm = (hist.iter().map(|v| v * v).sum::<f64>() + eps * eps).sqrt();
            let dst = out.at_mut(cy, cx);
            for (d, &v) in hist.iter().enumerate() {
                dst[d] = v / norm;
            }
        }
    }
    fill_stride(&mut out, win.stride);
    Ok(out)
}

// ---------------------------------------------------------------------------
// LBP

/// Number of histogram bins for uniform 8-point LBP: 58 uniform patterns
/// plus one catch-all.
pub const LBP_BINS: usize = 59;

/// Maps each of the 256 8-bit codes to a uniform-pattern bin.
pub fn lbp_uniform_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut next = 0u8;
    for code in 0..256usize {
        let transitions = (0..8)
            .filter(|&b| ((code >> b) & 1) != ((code >> ((b + 1) % 8)) & 1))
            .count();
        if transitions <= 2 {
            table[code] = next;
            next += 1;
        } else {
            table[code] = (LBP_BINS - 1) as u8;
        }
    }
    assert_eq!(next as usize, LBP_BINS - 1);
    table
}

/// 8-neighbor code at integer offsets scaled by `radius`; a bit is set when
/// the neighbor is >= the center.
pub fn lbp_code(img: &Image, y: usize, x: usize, radius: usize) -> u8 {
    let r = radius as isize;
    // clockwise from east, matching bit order 0..7
    const DIRS: [(isize, isize); 8] = [
        (0, 1),
        (1, 1),
        (1, 0),
        (1, -1),
        (0, -1),
        (-1, -1),
        (-1, 0),
        (-1, 1),
    ];
    let center = img.pixels[y * img.width + x];
    let mut code = 0u8;
    for (b, &(dy, dx)) in DIRS.iter().enumerate() {
        let v = px(img, y as isize + dy * r, x as isize + dx * r);
        if v >= center {
            code |= 1 << b;
        }
    }
    code
}

/// Per-window normalized histogram of uniform 8-point LBP codes. dim = 59.
pub fn lbp_features(
    img: &Image,
    win: &WindowSpec,
    radius: usize,
) -> Result<FeatureMap, FeatureError> {
    win.validate()?;
    if radius == 0 {
        return Err(FeatureError::InvalidWindow("lbp radius must be >= 1".into()));
    }
    let (h, w) = (img.height, img.width);
    let table = lbp_uniform_table();
    let bins: Vec<u8> = (0..h * w)
        .map(|i| table[lbp_code(img, i / w, i % w, radius) as usize])
        .collect();
    let bin_at = |y: isize, x: isize| bins[reflect(y, h) * w + reflect(x, w)] as usize;

    let mut out = FeatureMap::zeros(h, w, LBP_BINS);
    let r = win.radius as isize;
    let count = ((2 * win.radius + 1) * (2 * win.radius + 1)) as f64;
    let mut hist = vec![0.0f64; LBP_BINS];
    for cy in (0..h).step_by(win.stride) {
        for cx in (0..w).step_by(win.stride) {
            for v in hist.iter_mut() {
                *v = 0.0;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    hist[bin_at(cy as isize + dy, cx as isize + dx)] += 1.0;
                }
            }
            let dst = out.at_mut(cy, cx);
            for (d, &v) in hist.iter().enumerate() {
                dst[d] = v / count;
            }
        }
    }
    fill_stride(&mut out, win.stride);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Stacking and standardization

/// Concatenates each image's feature maps channel-wise, then standardizes
/// every channel to zero mean and unit variance over the whole dataset.
/// Channels with dataset-wide standard deviation below 1e-12 are dropped.
pub fn stack_features(per_image: &[Vec<FeatureMap>]) -> Result<Vec<FeatureMap>, FeatureError> {
    assert!(!per_image.is_empty());
    let stacked: Vec<FeatureMap> = per_image
        .iter()
        .map(|maps| {
            let refs: Vec<&FeatureMap> = maps.iter().collect();
            FeatureMap::concat(&refs).map_err(|_| FeatureError::ShapeMismatch)
        })
        .collect::<Result<_, _>>()?;
    let dim = stacked[0].dim;
    if stacked.iter().any(|m| m.dim != dim) {
        return Err(FeatureError::ShapeMismatch);
    }

    // dataset-wide per-channel moments; two-pass so constant channels get
    // exactly zero variance instead of cancellation residue
    let mut sum = vec![0.0f64; dim];
    let mut count = 0usize;
    for m in &stacked {
        count += m.height * m.width;
        for p in 0..m.height * m.width {
            for d in 0..dim {
                sum[d] += m.values[p * dim + d];
            }
        }
    }
    let inv = 1.0 / count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s * inv).collect();
    let mut var = vec![0.0f64; dim];
    for m in &stacked {
        for p in 0..m.height * m.width {
            for d in 0..dim {
                let dv = m.values[p * dim + d] - mean[d];
                var[d] += dv * dv;
            }
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v * inv).sqrt()).collect();
    let kept: Vec<usize> = (0..dim).filter(|&d| std[d] >= 1e-12).collect();

    Ok(stacked
        .iter()
        .map(|m| {
            let mut values = Vec::with_capacity(m.height * m.width * kept.len());
            for p in 0..m.height * m.width {
                for &d in &kept {
                    values.push((m.values[p * dim + d] - mean[d]) / std[d]);
                }
            }
            FeatureMap::new(m.height, m.width, kept.len(), values)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Binary serialization: (height, width, dim) as u32 LE + row-major f32.

pub fn save_feature_map(map: &FeatureMap, path: &Path) -> Result<(), FeatureError> {
    let mut out = Vec::with_capacity(12 + map.values.len() * 4);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.dim as u32).to_le_bytes());
    for &v in &map.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_feature_map(path: &Path) -> Result<FeatureMap, FeatureError> {
    let bytes = fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |reason: &str| FeatureError::Parse {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 {
        return Err(parse_err("truncated header"));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = h * w * dim;
    if bytes.len() != 12 + n * 4 {
        return Err(parse_err("size mismatch"));
    }
    let values = (0..n)
        .map(|i| {
            let o = 12 + i * 4;
            f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64
        })
        .collect();
    Ok(FeatureMap::new(h, w, dim, values))
}
