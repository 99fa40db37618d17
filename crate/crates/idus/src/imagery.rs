//! Image representation, file I/O, downsampling, and the seeded synthetic
//! seabed-texture dataset generator used as the test corpus.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Sentinel for pixels without a ground-truth class.
pub const UNLABELED: u8 = u8::MAX;

#[derive(Debug, Error)]
pub enum ImageryError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("image is not single-channel grayscale: {0}")]
    NotGrayscale(PathBuf),
    #[error("zero-sized image: {0}")]
    ZeroSized(PathBuf),
    #[error("downsample factor {factor} does not divide {height}x{width}")]
    NonDivisibleFactor {
        factor: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u8, num_classes: usize },
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// Single-channel intensity image with all values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(id: impl Into<String>, height: usize, width: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel buffer size mismatch");
        debug_assert!(
            pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)),
            "intensity out of [0,1]"
        );
        Image {
            id: id.into(),
            height,
            width,
            pixels,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Per-pixel class ids (or [`UNLABELED`]) with the ordered class-name list.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub class_names: Vec<String>,
}

impl GroundTruthMask {
    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNLABELED).count()
    }
}

/// An ordered image collection with optional semi-labeled ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub masks: Vec<Option<GroundTruthMask>>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

// ---------------------------------------------------------------------------
// File I/O

/// Loads an 8- or 16-bit grayscale PGM (P5) or PNG, scaling intensities to
/// `[0, 1]` by the format maximum. The image id is the filename stem.
pub fn load_image(path: &Path) -> Result<Image, ImageryError> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let (height, width, pixels) = if ext == "pgm" {
        read_pgm(path)?
    } else {
        read_png_gray(path)?
    };
    if height == 0 || width == 0 {
        return Err(ImageryError::ZeroSized(path.to_path_buf()));
    }
    Ok(Image::new(id, height, width, pixels))
}

fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>), ImageryError> {
    let bytes = fs::read(path).map_err(|source| ImageryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let decode = |reason: &str| ImageryError::Decode {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Option<String> {
        // skip whitespace and '#' comment lines
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos > start {
            Some(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        } else {
            None
        }
    };
    let magic = token(&bytes).ok_or_else(|| decode("missing magic"))?;
    if magic != "P5" {
        return Err(decode("not a P5 PGM"));
    }
    let width: usize = token(&bytes)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| decode("bad width"))?;
    let height: usize = token(&bytes)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| decode("bad height"))?;
    let maxval: u32 = token(&bytes)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| decode("bad maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(decode("maxval out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let mut pixels = Vec::with_capacity(n);
    if maxval < 256 {
        if bytes.len() < pos + n {
            return Err(decode("truncated raster"));
        }
        for &b in &bytes[pos..pos + n] {
            pixels.push(b as f64 / maxval as f64);
        }
    } else {
        if bytes.len() < pos + 2 * n {
            return Err(decode("truncated raster"));
        }
        for i in 0..n {
            let v = u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]);
            pixels.push(v as f64 / maxval as f64);
        }
    }
    Ok((height, width, pixels))
}

fn read_png_gray(path: &Path) -> Result<(usize, usize, Vec<f64>), ImageryError> {
    let img = image::open(path).map_err(|e| ImageryError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let pixels = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Ok((h, w, pixels))
        }
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let pixels = buf
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect();
            Ok((h, w, pixels))
        }
        _ => Err(ImageryError::NotGrayscale(path.to_path_buf())),
    }
}

/// Writes an image as a 16-bit binary PGM.
pub fn save_image_pgm16(img: &Image, path: &Path) -> Result<(), ImageryError> {
    let mut out = Vec::with_capacity(img.len() * 2 + 32);
    write!(out, "P5\n{} {}\n65535\n", img.width, img.height).unwrap();
    for &p in &img.pixels {
        let v = (p.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out).map_err(|source| ImageryError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Default color palette for label images. Index [`UNLABELED`] maps to black.
pub fn default_palette(num_classes: usize) -> Vec<[u8; 3]> {
    const COLORS: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
    ];
    assert!(num_classes <= COLORS.len(), "palette supports up to 8 classes");
    COLORS[..num_classes].to_vec()
}

/// Writes a per-pixel label grid as a paletted RGB PNG. [`UNLABELED`] pixels
/// are written as black.
pub fn save_label_image(
    labels: &[u8],
    height: usize,
    width: usize,
    palette: &[[u8; 3]],
    path: &Path,
) -> Result<(), ImageryError> {
    assert_eq!(labels.len(), height * width);
    let mut data = Vec::with_capacity(labels.len() * 3);
    for &l in labels {
        if l == UNLABELED {
            data.extend_from_slice(&[0, 0, 0]);
        } else {
            let l = l as usize;
            if l >= palette.len() {
                return Err(ImageryError::LabelOutOfRange {
                    label: labels[0],
                    num_classes: palette.len(),
                });
            }
            data.extend_from_slice(&palette[l]);
        }
    }
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(width as u32, height as u32, data).unwrap();
    buf.save(path).map_err(|e| ImageryError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads a label PNG written by [`save_label_image`] back into a label grid.
pub fn load_label_image(
    path: &Path,
    palette: &[[u8; 3]],
) -> Result<(usize, usize, Vec<u8>), ImageryError> {
    let img = image::open(path)
        .map_err(|e| ImageryError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut labels = Vec::with_capacity(w * h);
    for px in img.pixels() {
        let rgb = [px[0], px[1], px[2]];
        if rgb == [0, 0, 0] {
            labels.push(UNLABELED);
        } else {
            let idx = palette.iter().position(|&c| c == rgb).ok_or_else(|| {
                ImageryError::Decode {
                    path: path.to_path_buf(),
                    reason: format!("color {rgb:?} not in palette"),
                }
            })?;
            labels.push(idx as u8);
        }
    }
    Ok((h, w, labels))
}

// ---------------------------------------------------------------------------
// Downsampling

/// Block-mean downsampling by an integer factor that divides both dimensions.
pub fn downsample(img: &Image, factor: usize) -> Result<Image, ImageryError> {
    assert!(factor > 0);
    if img.height % factor != 0 || img.width % factor != 0 {
        return Err(ImageryError::NonDivisibleFactor {
            factor,
            height: img.height,
            width: img.width,
        });
    }
    let (oh, ow) = (img.height / factor, img.width / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut pixels = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += img.get(oy * factor + dy, ox * factor + dx);
                }
            }
            pixels[oy * ow + ox] = (acc * inv).clamp(0.0, 1.0);
        }
    }
    Ok(Image::new(img.id.clone(), oh, ow, pixels))
}

// ---------------------------------------------------------------------------
// Synthetic dataset generation

/// Texture families available to the generator, ordered so that prefixes are
/// maximally distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureFamily {
    Shadow,
    BrightSand,
    RippleLarge,
    DarkSand,
    RippleSmall,
    Rock,
    Seagrass,
}

const FAMILY_ORDER: [TextureFamily; 7] = [
    TextureFamily::Shadow,
    TextureFamily::BrightSand,
    TextureFamily::RippleLarge,
    TextureFamily::DarkSand,
    TextureFamily::RippleSmall,
    TextureFamily::Rock,
    TextureFamily::Seagrass,
];

pub fn family_name(f: TextureFamily) -> &'static str {
    match f {
        TextureFamily::Shadow => "SH",
        TextureFamily::BrightSand => "BS",
        TextureFamily::RippleLarge => "SR-large",
        TextureFamily::DarkSand => "DS",
        TextureFamily::RippleSmall => "SR-small",
        TextureFamily::Rock => "RK",
        TextureFamily::Seagrass => "SG",
    }
}

/// Parameters for the synthetic seabed-texture generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Number of texture classes, in `[2, 7]`.
    pub num_classes: usize,
    /// Number of images to generate.
    pub count: usize,
    /// Square image side length, at least 32.
    pub size: usize,
    /// Voronoi region sites per image.
    pub regions_per_image: usize,
    /// Multiplicative speckle strength.
    pub speckle: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 3,
            count: 20,
            size: 64,
            regions_per_image: 4,
            speckle: 0.12,
        }
    }
}

/// Generates a fully deterministic dataset of Voronoi-composed texture
/// images with exact ground-truth masks.
pub fn generate_synthetic_dataset(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<Dataset, ImageryError> {
    if !(2..=7).contains(&spec.num_classes) {
        return Err(ImageryError::InvalidSpec(format!(
            "num_classes must be in [2,7], got {}",
            spec.num_classes
        )));
    }
    if spec.size < 32 {
        return Err(ImageryError::InvalidSpec(format!(
            "size must be >= 32, got {}",
            spec.size
        )));
    }
    if spec.count < 1 {
        return Err(ImageryError::InvalidSpec("count must be >= 1".into()));
    }
    if spec.regions_per_image < 1 {
        return Err(ImageryError::InvalidSpec("regions_per_image must be >= 1".into()));
    }

    let class_names: Vec<String> = FAMILY_ORDER[..spec.num_classes]
        .iter()
        .map(|&f| family_name(f).to_string())
        .collect();

    let mut images = Vec::with_capacity(spec.count);
    let mut masks = Vec::with_capacity(spec.count);
    // Cycle classes over all regions dataset-wide so every class appears.
    let mut class_cursor = 0usize;
    for img_idx in 0..spec.count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64
            .wrapping_mul(img_idx as u64 + 1)));
        let n = spec.size;
        let r = spec.regions_per_image;
        let sites: Vec<(f64, f64)> = (0..r)
            .map(|_| (rng.gen::<f64>() * n as f64, rng.gen::<f64>() * n as f64))
            .collect();
        let site_class: Vec<u8> = (0..r)
            .map(|_| {
                let c = (class_cursor % spec.num_classes) as u8;
                class_cursor += 1;
                c
            })
            .collect();
        let phases: Vec<(f64, f64)> = (0..r)
            .map(|_| (rng.gen::<f64>() * std::f64::consts::TAU, rng.gen::<f64>() * std::f64::consts::PI))
            .collect();

        let mut pixels = vec![0.0f64; n * n];
        let mut labels = vec![0u8; n * n];
        // Pre-draw blob fields once per region that needs them.
        let blob_fields: Vec<Option<Vec<f64>>> = (0..r)
            .map(|ri| {
                let fam = FAMILY_ORDER[site_class[ri] as usize];
                if matches!(fam, TextureFamily::Rock | TextureFamily::Seagrass) {
                    Some(blob_field(n, &mut rng))
                } else {
                    None
                }
            })
            .collect();
        for y in 0..n {
            for x in 0..n {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (si, &(sy, sx)) in sites.iter().enumerate() {
                    let d = (y as f64 - sy).powi(2) + (x as f64 - sx).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = si;
                    }
                }
                let class = site_class[best];
                let fam = FAMILY_ORDER[class as usize];
                let (orient, phase) = phases[best];
                let base = texture_value(fam, y, x, orient, phase, blob_fields[best].as_deref(), n);
                labels[y * n + x] = class;
                pixels[y * n + x] = base;
            }
        }
        // Multiplicative speckle.
        for p in pixels.iter_mut() {
            let noise: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            *p = (*p * (1.0 + spec.speckle * noise)).clamp(0.0, 1.0);
        }
        images.push(Image::new(format!("synth_{img_idx:04}"), n, n, pixels));
        masks.push(Some(GroundTruthMask {
            height: n,
            width: n,
            labels,
            class_names: class_names.clone(),
        }));
    }
    Ok(Dataset {
        images,
        masks,
        num_classes: spec.num_classes,
    })
}

fn texture_value(
    fam: TextureFamily,
    y: usize,
    x: usize,
    orient: f64,
    phase: f64,
    blobs: Option<&[f64]>,
    n: usize,
) -> f64 {
    let (yf, xf) = (y as f64, x as f64);
    match fam {
        TextureFamily::Shadow => 0.06,
        TextureFamily::DarkSand => 0.35,
        TextureFamily::BrightSand => 0.80,
        TextureFamily::RippleLarge => {
            let t = (xf * orient.cos() + yf * orient.sin()) * (std::f64::consts::TAU / 16.0);
            0.50 + 0.28 * (t + phase).sin()
        }
        TextureFamily::RippleSmall => {
            let t = (xf * orient.cos() + yf * orient.sin()) * (std::f64::consts::TAU / 5.0);
            0.50 + 0.22 * (t + phase).sin()
        }
        TextureFamily::Rock => 0.45 + 0.45 * blobs.unwrap()[y * n + x],
        TextureFamily::Seagrass => 0.30 - 0.22 * blobs.unwrap()[y * n + x],
    }
}

// Sum of randomly placed Gaussian bumps, normalized to [0,1].
fn blob_field(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut field = vec![0.0f64; n * n];
    let count = (n * n) / 48;
    for _ in 0..count {
        let cy = rng.gen::<f64>() * n as f64;
        let cx = rng.gen::<f64>() * n as f64;
        let sigma = 1.2 + rng.gen::<f64>() * 1.8;
        let amp = 0.5 + rng.gen::<f64>() * 0.5;
        let rad = (3.0 * sigma).ceil() as isize;
        let (cyi, cxi) = (cy as isize, cx as isize);
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                let (py, px) = (cyi + dy, cxi + dx);
                if py < 0 || px < 0 || py >= n as isize || px >= n as isize {
                    continue;
                }
                let d2 = (py as f64 - cy).powi(2) + (px as f64 - cx).powi(2);
                field[py as usize * n + px as usize] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let max = field.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
    for v in field.iter_mut() {
        *v = (*v / max).min(1.0);
    }
    field
}

// ---------------------------------------------------------------------------
// Dataset manifest

/// Writes a dataset to `dir`: images as 16-bit PGMs, masks as paletted PNGs,
/// plus a `manifest.txt` listing `image<TAB>mask` path pairs.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf, ImageryError> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|source| ImageryError::Io {
        path: images_dir.clone(),
        source,
    })?;
    let palette = default_palette(dataset.num_classes);
    let mut manifest = format!("classes {}\n", dataset.num_classes);
    for (img, mask) in dataset.images.iter().zip(&dataset.masks) {
        let img_path = images_dir.join(format!("{}.pgm", img.id));
        save_image_pgm16(img, &img_path)?;
        let mask_entry = match mask {
            Some(m) => {
                let mask_path = images_dir.join(format!("{}_mask.png", img.id));
                save_label_image(&m.labels, m.height, m.width, &palette, &mask_path)?;
                mask_path.to_string_lossy().into_owned()
            }
            None => "-".to_string(),
        };
        manifest.push_str(&format!(
            "{}\t{}\n",
            img_path.to_string_lossy(),
            mask_entry
        ));
    }
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, manifest).map_err(|source| ImageryError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    Ok(manifest_path)
}

/// Loads a dataset from a manifest written by [`save_dataset`].
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, ImageryError> {
    let text = fs::read_to_string(manifest_path).map_err(|source| ImageryError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| ImageryError::Manifest("empty manifest".into()))?;
    let num_classes: usize = header
        .strip_prefix("classes ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| ImageryError::Manifest(format!("bad header line: {header}")))?;
    let palette = default_palette(num_classes);
    let class_names: Vec<String> = FAMILY_ORDER[..num_classes.min(7)]
        .iter()
        .map(|&f| family_name(f).to_string())
        .collect();
    let mut images = Vec::new();
    let mut masks = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let img_path = parts
            .next()
            .ok_or_else(|| ImageryError::Manifest(format!("bad line: {line}")))?;
        let mask_path = parts.next().unwrap_or("-");
        let img = load_image(Path::new(img_path))?;
        let mask = if mask_path == "-" {
            None
        } else {
            let (h, w, labels) = load_label_image(Path::new(mask_path), &palette)?;
            Some(GroundTruthMask {
                height: h,
                width: w,
                labels,
                class_names: class_names.clone(),
            })
        };
        images.push(img);
        masks.push(mask);
    }
    Ok(Dataset {
        images,
        masks,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn pgm8_scaling() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        fs::write(&p, [b"P5\n2 2\n255\n".as_slice(), &[0u8, 255, 128, 64]].concat()).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.height, 2);
        assert_eq!(img.width, 2);
        assert_eq!(img.pixels, vec![0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(img.id, "t");
    }

    #[test]
    fn pgm16_max_is_one() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        fs::write(&p, [b"P5\n1 1\n65535\n".as_slice(), &65535u16.to_be_bytes()].concat()).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.pixels, vec![1.0]);
    }

    #[test]
    fn all_zero_image() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("z.pgm");
        fs::write(&p, [b"P5\n2 1\n255\n".as_slice(), &[0u8, 0]].concat()).unwrap();
        let img = load_image(&p).unwrap();
        assert!(img.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.pgm");
        fs::write(&p, b"P2\n1 1\n255\n0").unwrap();
        assert!(load_image(&p).is_err());
    }

    #[test]
    fn downsample_constant() {
        let img = Image::new("c", 8, 8, vec![0.4; 64]);
        let out = downsample(&img, 4).unwrap();
        assert_eq!(out.height, 2);
        assert!(out.pixels.iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn downsample_forced_arithmetic() {
        let img = Image::new("d", 2, 2, vec![0.0, 1.0, 0.0, 1.0]);
        let out = downsample(&img, 2).unwrap();
        assert_eq!(out.pixels, vec![0.5]);
    }

    #[test]
    fn downsample_preserves_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pixels: Vec<f64> = (0..64 * 64).map(|_| rng.gen::<f64>()).collect();
        let mean: f64 = pixels.iter().sum::<f64>() / pixels.len() as f64;
        let img = Image::new("r", 64, 64, pixels);
        let out = downsample(&img, 2).unwrap();
        let out_mean: f64 = out.pixels.iter().sum::<f64>() / out.pixels.len() as f64;
        assert!((mean - out_mean).abs() < 1e-12);
    }

    #[test]
    fn downsample_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pixels: Vec<f64> = (0..48 * 48).map(|_| rng.gen::<f64>()).collect();
        let img = Image::new("r", 48, 48, pixels);
        let ab = downsample(&downsample(&img, 2).unwrap(), 3).unwrap();
        let once = downsample(&img, 6).unwrap();
        for (a, b) in ab.pixels.iter().zip(&once.pixels) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn downsample_rejects_nondivisible() {
        let img = Image::new("c", 9, 9, vec![0.0; 81]);
        assert!(downsample(&img, 2).is_err());
    }

    #[test]
    fn synthetic_deterministic() {
        let spec = SyntheticSpec {
            count: 3,
            size: 32,
            ..Default::default()
        };
        let a = generate_synthetic_dataset(&spec, 7).unwrap();
        let b = generate_synthetic_dataset(&spec, 7).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.pixels, y.pixels);
        }
        for (x, y) in a.masks.iter().zip(&b.masks) {
            assert_eq!(x.as_ref().unwrap().labels, y.as_ref().unwrap().labels);
        }
    }

    #[test]
    fn synthetic_rejects_one_class() {
        let spec = SyntheticSpec {
            num_classes: 1,
            ..Default::default()
        };
        assert!(generate_synthetic_dataset(&spec, 1).is_err());
    }

    #[test]
    fn synthetic_uses_all_classes() {
        let spec = SyntheticSpec {
            num_classes: 3,
            count: 10,
            size: 64,
            ..Default::default()
        };
        let ds = generate_synthetic_dataset(&spec, 42).unwrap();
        let mut counts = [0usize; 3];
        for m in ds.masks.iter().flatten() {
            assert_eq!(m.labels.len(), m.height * m.width);
            for &l in &m.labels {
                counts[l as usize] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c > 0), "counts {counts:?}");
    }

    #[test]
    fn synthetic_values_in_range() {
        let spec = SyntheticSpec {
            num_classes: 7,
            count: 2,
            size: 32,
            regions_per_image: 7,
            ..Default::default()
        };
        let ds = generate_synthetic_dataset(&spec, 3).unwrap();
        for img in &ds.images {
            assert!(img.pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn label_image_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("lab.png");
        let palette = default_palette(7);
        let labels: Vec<u8> = (0..64).map(|i| (i % 7) as u8).collect();
        save_label_image(&labels, 8, 8, &palette, &p).unwrap();
        let (h, w, back) = load_label_image(&p, &palette).unwrap();
        assert_eq!((h, w), (8, 8));
        assert_eq!(back, labels);
    }

    #[test]
    fn label_image_seven_distinct_colors() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("lab7.png");
        let palette = default_palette(7);
        let labels: Vec<u8> = (0..49).map(|i| (i % 7) as u8).collect();
        save_label_image(&labels, 7, 7, &palette, &p).unwrap();
        let img = image::open(&p).unwrap().into_rgb8();
        let mut colors: Vec<[u8; 3]> = img.pixels().map(|p| [p[0], p[1], p[2]]).collect();
        colors.sort();
        colors.dedup();
        assert_eq!(colors.len(), 7);
    }

    #[test]
    fn dataset_manifest_round_trip() {
        let dir = tempdir().unwrap();
        let spec = SyntheticSpec {
            count: 2,
            size: 32,
            ..Default::default()
        };
        let ds = generate_synthetic_dataset(&spec, 9).unwrap();
        let manifest = save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&manifest).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.num_classes, 3);
        for (a, b) in ds.masks.iter().zip(&back.masks) {
            assert_eq!(a.as_ref().unwrap().labels, b.as_ref().unwrap().labels);
        }
        // pixel round trip at 16-bit quantization
        for (a, b) in ds.images.iter().zip(&back.images) {
            for (x, y) in a.pixels.iter().zip(&b.pixels) {
                assert!((x - y).abs() < 1.0 / 65535.0);
            }
        }
    }
}
