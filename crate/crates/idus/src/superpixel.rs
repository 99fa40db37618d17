//! SLIC superpixel generation and the two quantization bridges: pooling
//! pixel features into regional features and mapping regional labels back
//! to pixels.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SuperpixelError {
    #[error("target segment count {target} exceeds pixel count {pixels}")]
    TooManySegments { target: usize, pixels: usize },
    #[error("feature map has zero dimension")]
    ZeroDim,
    #[error("shape mismatch: features {0}x{1}, segmentation {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("label count {got} does not match segment count {expected}")]
    LabelCountMismatch { got: usize, expected: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

/// Dense per-pixel feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    /// Row-major, `dim` contiguous values per pixel.
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), height * width * dim);
        FeatureMap {
            height,
            width,
            dim,
            values,
        }
    }

    pub fn zeros(height: usize, width: usize, dim: usize) -> Self {
        FeatureMap {
            height,
            width,
            dim,
            values: vec![0.0; height * width * dim],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.width + col) * self.dim;
        &self.values[base..base + self.dim]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let base = (row * self.width + col) * self.dim;
        &mut self.values[base..base + self.dim]
    }

    /// Concatenates channels of maps with identical spatial shape.
    pub fn concat(maps: &[&FeatureMap]) -> Result<FeatureMap, SuperpixelError> {
        assert!(!maps.is_empty());
        let (h, w) = (maps[0].height, maps[0].width);
        for m in maps {
            if m.height != h || m.width != w {
                return Err(SuperpixelError::ShapeMismatch(h, w, m.height, m.width));
            }
        }
        let dim: usize = maps.iter().map(|m| m.dim).sum();
        let mut values = Vec::with_capacity(h * w * dim);
        for row in 0..h {
            for col in 0..w {
                for m in maps {
                    values.extend_from_slice(m.at(row, col));
                }
            }
        }
        Ok(FeatureMap::new(h, w, dim, values))
    }
}

/// A partition of an image into `num_segments` 4-connected regions with
/// dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelSegmentation {
    pub height: usize,
    pub width: usize,
    pub segment_of: Vec<u32>,
    pub num_segments: usize,
    pub image_id: String,
}

impl SuperpixelSegmentation {
    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_segments];
        for &s in &self.segment_of {
            sizes[s as usize] += 1;
        }
        sizes
    }
}

/// Per-segment pooled feature rows.
#[derive(Debug, Clone)]
pub struct SuperpixelFeatures {
    pub dim: usize,
    /// `num_segments` rows of `dim` values.
    pub features: Vec<f64>,
    pub num_segments: usize,
}

impl SuperpixelFeatures {
    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.features[k * self.dim..(k + 1) * self.dim]
    }
}

// ---------------------------------------------------------------------------
// SLIC

struct Centroid {
    y: f64,
    x: f64,
    feat: Vec<f64>,
}

/// SLIC: local k-means in joint (feature, spatial) space. Centroids start on
/// a regular grid; assignment per centroid is restricted to a 2S-square
/// window with distance `sqrt(d_feat^2 + (compactness*d_xy/S)^2)`. After
/// convergence, fragments are absorbed into the largest adjacent segment and
/// ids are relabeled densely in row-major first-occurrence order.
pub fn slic(
    features: &FeatureMap,
    image_id: &str,
    target_segments: usize,
    compactness: f64,
    max_iters: usize,
) -> Result<SuperpixelSegmentation, SuperpixelError> {
    let (h, w, dim) = (features.height, features.width, features.dim);
    let pixels = h * w;
    if target_segments == 0 || target_segments > pixels {
        return Err(SuperpixelError::TooManySegments {
            target: target_segments,
            pixels,
        });
    }
    if dim == 0 {
        return Err(SuperpixelError::ZeroDim);
    }

    let spacing = ((pixels as f64) / target_segments as f64).sqrt();
    // pick the floor/ceil grid combination whose cell count is closest to
    // the target (independent rounding can undershoot badly, e.g. a square
    // image with target 2); ties prefer wider grids for row-major layouts
    let candidates = |v: f64| -> Vec<usize> {
        let mut c = vec![(v.floor() as usize).max(1), (v.ceil() as usize).max(1)];
        c.dedup();
        c
    };
    let mut grid_h = 1usize;
    let mut grid_w = 1usize;
    let mut best_err = usize::MAX;
    for &gh in &candidates(h as f64 / spacing) {
        for &gw in &candidates(w as f64 / spacing) {
            if gh * gw > pixels {
                continue;
            }
            let err = (gh * gw).abs_diff(target_segments);
            if err < best_err || (err == best_err && gw > grid_w) {
                best_err = err;
                grid_h = gh;
                grid_w = gw;
            }
        }
    }
    let step_y = h as f64 / grid_h as f64;
    let step_x = w as f64 / grid_w as f64;
    let mut centroids: Vec<Centroid> = Vec::with_capacity(grid_h * grid_w);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let cy = (gy as f64 + 0.5) * step_y - 0.5;
            let cx = (gx as f64 + 0.5) * step_x - 0.5;
            let py = cy.round().clamp(0.0, (h - 1) as f64) as usize;
            let px = cx.round().clamp(0.0, (w - 1) as f64) as usize;
            centroids.push(Centroid {
                y: cy,
                x: cx,
                feat: features.at(py, px).to_vec(),
            });
        }
    }

    let window = (2.0 * spacing).ceil() as isize;
    let inv_s = if spacing > 0.0 { 1.0 / spacing } else { 0.0 };
    let mut assign = vec![u32::MAX; pixels];
    let mut best_dist = vec![f64::INFINITY; pixels];

    for _ in 0..max_iters {
        for d in best_dist.iter_mut() {
            *d = f64::INFINITY;
        }
        for a in assign.iter_mut() {
            *a = u32::MAX;
        }
        for (ci, c) in centroids.iter().enumerate() {
            let y0 = ((c.y.round() as isize) - window).max(0) as usize;
            let y1 = (((c.y.round() as isize) + window) as usize).min(h - 1);
            let x0 = ((c.x.round() as isize) - window).max(0) as usize;
            let x1 = (((c.x.round() as isize) + window) as usize).min(w - 1);
            for py in y0..=y1 {
                for px in x0..=x1 {
                    let f = features.at(py, px);
                    let mut df2 = 0.0;
                    for (a, b) in f.iter().zip(&c.feat) {
                        df2 += (a - b) * (a - b);
                    }
                    let dy = py as f64 - c.y;
                    let dx = px as f64 - c.x;
                    let ds = (compactness * inv_s) * (compactness * inv_s) * (dy * dy + dx * dx);
                    let d = df2 + ds;
                    let idx = py * w + px;
                    // strict < keeps ties at the lower centroid index
                    if d < best_dist[idx] {
                        best_dist[idx] = d;
                        assign[idx] = ci as u32;
                    }
                }
            }
        }
        // pixels outside every window fall back to the spatially nearest centroid
        for idx in 0..pixels {
            if assign[idx] == u32::MAX {
                let (py, px) = (idx / w, idx % w);
                let mut best = 0u32;
                let mut bd = f64::INFINITY;
                for (ci, c) in centroids.iter().enumerate() {
                    let d = (py as f64 - c.y).powi(2) + (px as f64 - c.x).powi(2);
                    if d < bd {
                        bd = d;
                        best = ci as u32;
                    }
                }
                assign[idx] = best;
            }
        }

        // centroid update
        let mut movement: f64 = 0.0;
        let mut sums: Vec<(f64, f64, Vec<f64>, usize)> = (0..centroids.len())
            .map(|_| (0.0, 0.0, vec![0.0; dim], 0usize))
            .collect();
        for idx in 0..pixels {
            let ci = assign[idx] as usize;
            let (py, px) = (idx / w, idx % w);
            let s = &mut sums[ci];
            s.0 += py as f64;
            s.1 += px as f64;
            for (acc, v) in s.2.iter_mut().zip(features.at(py, px)) {
                *acc += v;
            }
            s.3 += 1;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s.3 == 0 {
                continue;
            }
            let inv = 1.0 / s.3 as f64;
            let ny = s.0 * inv;
            let nx = s.1 * inv;
            let mut m = (ny - c.y).powi(2) + (nx - c.x).powi(2);
            for (i, f) in c.feat.iter_mut().enumerate() {
                let nf = s.2[i] * inv;
                m += (nf - *f).powi(2);
                *f = nf;
            }
            c.y = ny;
            c.x = nx;
            movement = movement.max(m.sqrt());
        }
        if movement < 1e-4 {
            break;
        }
    }

    let segment_of = enforce_connectivity(&assign, h, w);
    let num_segments = segment_of.iter().map(|&s| s as usize).max().unwrap_or(0) + 1;
    Ok(SuperpixelSegmentation {
        height: h,
        width: w,
        segment_of,
        num_segments,
        image_id: image_id.to_string(),
    })
}

/// Splits the label map into 4-connected components, keeps the largest
/// component of each label, and absorbs every other fragment into the
/// largest adjacent kept segment. Ids are relabeled densely in row-major
/// first-occurrence order.
fn enforce_connectivity(assign: &[u32], h: usize, w: usize) -> Vec<u32> {
    let pixels = h * w;
    let mut comp = vec![u32::MAX; pixels];
    let mut comp_label: Vec<u32> = Vec::new();
    let mut comp_size: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..pixels {
        if comp[start] != u32::MAX {
            continue;
        }
        let cid = comp_label.len() as u32;
        let label = assign[start];
        comp_label.push(label);
        let mut size = 0usize;
        stack.push(start);
        comp[start] = cid;
        while let Some(idx) = stack.pop() {
            size += 1;
            let (y, x) = (idx / w, idx % w);
            let mut visit = |ny: usize, nx: usize| {
                let nidx = ny * w + nx;
                if comp[nidx] == u32::MAX && assign[nidx] == label {
                    comp[nidx] = cid;
                    stack.push(nidx);
                }
            };
            if y > 0 {
                visit(y - 1, x);
            }
            if y + 1 < h {
                visit(y + 1, x);
            }
            if x > 0 {
                visit(y, x - 1);
            }
            if x + 1 < w {
                visit(y, x + 1);
            }
        }
        comp_size.push(size);
    }

    // largest component per label is kept; ties go to the first component
    let num_labels = assign.iter().map(|&a| a as usize).max().unwrap_or(0) + 1;
    let mut keeper: Vec<Option<u32>> = vec![None; num_labels];
    for cid in 0..comp_label.len() {
        let l = comp_label[cid] as usize;
        match keeper[l] {
            None => keeper[l] = Some(cid as u32),
            Some(k) => {
                if comp_size[cid] > comp_size[k as usize] {
                    keeper[l] = Some(cid as u32);
                }
            }
        }
    }
    let kept: Vec<bool> = (0..comp_label.len())
        .map(|cid| keeper[comp_label[cid] as usize] == Some(cid as u32))
        .collect();

    // absorb fragments into the largest adjacent kept component; fragments
    // adjacent only to other fragments wait for their neighbors first
    let mut kept = kept;
    let mut owner: Vec<u32> = (0..comp_label.len() as u32).collect();
    fn resolve(owner: &[u32], mut c: u32) -> u32 {
        while owner[c as usize] != c {
            c = owner[c as usize];
        }
        c
    }
    let mut unresolved: Vec<u32> = (0..comp_label.len() as u32)
        .filter(|&c| !kept[c as usize])
        .collect();
    while !unresolved.is_empty() {
        let mut progressed = false;
        let mut still = Vec::new();
        for &frag in &unresolved {
            // find the largest adjacent component that resolves to a kept one
            let mut best: Option<(usize, u32)> = None;
            for idx in 0..pixels {
                if comp[idx] != frag {
                    continue;
                }
                let (y, x) = (idx / w, idx % w);
                let mut consider = |nidx: usize| {
                    let nc = resolve(&owner, comp[nidx]);
                    if nc != frag && kept[nc as usize] {
                        let sz = comp_size[nc as usize];
                        if best.map_or(true, |(bs, bc)| sz > bs || (sz == bs && nc < bc)) {
                            best = Some((sz, nc));
                        }
                    }
                };
                if y > 0 {
                    consider(idx - w);
                }
                if y + 1 < h {
                    consider(idx + w);
                }
                if x > 0 {
                    consider(idx - 1);
                }
                if x + 1 < w {
                    consider(idx + 1);
                }
            }
            if let Some((_, target)) = best {
                owner[frag as usize] = target;
                progressed = true;
            } else {
                still.push(frag);
            }
        }
        if !progressed {
            // fragment with no kept neighbor at all: promote it
            if let Some(&frag) = still.first() {
                kept[frag as usize] = true;
                still.remove(0);
            } else {
                break;
            }
        }
        unresolved = still;
    }

    // dense relabel in row-major first-occurrence order
    let mut dense: Vec<u32> = vec![u32::MAX; owner.len()];
    let mut next = 0u32;
    let mut out = vec![0u32; pixels];
    for idx in 0..pixels {
        let root = resolve(&owner, comp[idx]);
        if dense[root as usize] == u32::MAX {
            dense[root as usize] = next;
            next += 1;
        }
        out[idx] = dense[root as usize];
    }
    out
}

// ---------------------------------------------------------------------------
// Quantization bridges

/// Pools pixel features into per-segment means.
pub fn pool(
    features: &FeatureMap,
    seg: &SuperpixelSegmentation,
) -> Result<SuperpixelFeatures, SuperpixelError> {
    if features.height != seg.height || features.width != seg.width {
        return Err(SuperpixelError::ShapeMismatch(
            features.height,
            features.width,
            seg.height,
            seg.width,
        ));
    }
    let dim = features.dim;
    let k = seg.num_segments;
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (idx, &s) in seg.segment_of.iter().enumerate() {
        let s = s as usize;
        counts[s] += 1;
        let base = idx * dim;
        for d in 0..dim {
            sums[s * dim + d] += features.values[base + d];
        }
    }
    for s in 0..k {
        if counts[s] > 0 {
            let inv = 1.0 / counts[s] as f64;
            for d in 0..dim {
                sums[s * dim + d] *= inv;
            }
        }
    }
    Ok(SuperpixelFeatures {
        dim,
        features: sums,
        num_segments: k,
    })
}

/// Broadcasts per-segment labels back to a per-pixel label grid.
pub fn map_labels(
    seg: &SuperpixelSegmentation,
    labels: &[u8],
) -> Result<Vec<u8>, SuperpixelError> {
    if labels.len() != seg.num_segments {
        return Err(SuperpixelError::LabelCountMismatch {
            got: labels.len(),
            expected: seg.num_segments,
        });
    }
    Ok(seg
        .segment_of
        .iter()
        .map(|&s| labels[s as usize])
        .collect())
}

// ---------------------------------------------------------------------------
// Serialization: 16-bit PGM of segment ids plus a sidecar text header.

pub fn save_segmentation(
    seg: &SuperpixelSegmentation,
    path: &Path,
) -> Result<(), SuperpixelError> {
    use std::io::Write as _;
    assert!(seg.num_segments <= u16::MAX as usize + 1);
    let mut out = Vec::with_capacity(seg.segment_of.len() * 2 + 32);
    write!(out, "P5\n{} {}\n65535\n", seg.width, seg.height).unwrap();
    for &s in &seg.segment_of {
        out.extend_from_slice(&(s as u16).to_be_bytes());
    }
    fs::write(path, out).map_err(|source| SuperpixelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let header = format!("segments {}\nimage_id {}\n", seg.num_segments, seg.image_id);
    let hpath = path.with_extension("hdr");
    fs::write(&hpath, header).map_err(|source| SuperpixelError::Io {
        path: hpath,
        source,
    })
}

pub fn load_segmentation(path: &Path) -> Result<SuperpixelSegmentation, SuperpixelError> {
    let bytes = fs::read(path).map_err(|source| SuperpixelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |reason: &str| SuperpixelError::Parse {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(64)]);
    let mut parts = text.split_ascii_whitespace();
    if parts.next() != Some("P5") {
        return Err(parse_err("not a P5 PGM"));
    }
    let width: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err("bad width"))?;
    let height: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err("bad height"))?;
    // locate raster start: after the third header token's trailing whitespace
    let mut seen = 0;
    let mut pos = 0;
    let mut in_token = false;
    for (i, &b) in bytes.iter().enumerate() {
        if b.is_ascii_whitespace() {
            if in_token {
                seen += 1;
                in_token = false;
                if seen == 4 {
                    pos = i + 1;
                    break;
                }
            }
        } else {
            in_token = true;
        }
    }
    let n = width * height;
    if bytes.len() < pos + 2 * n {
        return Err(parse_err("truncated raster"));
    }
    let mut segment_of = Vec::with_capacity(n);
    for i in 0..n {
        segment_of.push(u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as u32);
    }
    let hpath = path.with_extension("hdr");
    let header = fs::read_to_string(&hpath).map_err(|source| SuperpixelError::Io {
        path: hpath.clone(),
        source,
    })?;
    let mut num_segments = 0usize;
    let mut image_id = String::new();
    for line in header.lines() {
        if let Some(v) = line.strip_prefix("segments ") {
            num_segments = v.trim().parse().map_err(|_| SuperpixelError::Parse {
                path: hpath.clone(),
                reason: "bad segments".into(),
            })?;
        } else if let Some(v) = line.strip_prefix("image_id ") {
            image_id = v.trim().to_string();
        }
    }
    Ok(SuperpixelSegmentation {
        height,
        width,
        segment_of,
        num_segments,
        image_id,
    })
}

/// Checks the partition contract: dense non-empty ids and 4-connected
/// segments. Used by tests and debug assertions.
pub fn validate_partition(seg: &SuperpixelSegmentation) -> Result<(), String> {
    let sizes = seg.segment_sizes();
    if sizes.iter().any(|&s| s == 0) {
        return Err("empty segment id".into());
    }
    if seg
        .segment_of
        .iter()
        .any(|&s| s as usize >= seg.num_segments)
    {
        return Err("segment id out of range".into());
    }
    // connectivity: flood fill from the first pixel of each segment must
    // reach the whole segment
    let (h, w) = (seg.height, seg.width);
    let mut seen_first = vec![false; seg.num_segments];
    let mut visited = vec![false; h * w];
    let mut stack = Vec::new();
    for idx in 0..h * w {
        let s = seg.segment_of[idx] as usize;
        if seen_first[s] {
            continue;
        }
        seen_first[s] = true;
        let mut count = 0usize;
        stack.push(idx);
        visited[idx] = true;
        while let Some(p) = stack.pop() {
            count += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |np: usize| {
                if !visited[np] && seg.segment_of[np] as usize == s {
                    visited[np] = true;
                    stack.push(np);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        if count != sizes[s] {
            return Err(format!("segment {s} is disconnected"));
        }
    }
    Ok(())
}
