//! The iterative training driver: texton-based pseudo-label
//! initialization, the epoch loop, scheduled superpixel-boundary and
//! pseudo-label updates, and the classical-feature baseline pipeline.
//!
//! The alternating scheme trains the encoder-decoder against its own
//! cluster-derived pseudo-labels: every `update_boundaries_every` epochs
//! the superpixel boundaries are regenerated from the current softmax
//! features, and every `update_labels_every` epochs the pooled regional
//! features are re-clustered into fresh pseudo-labels. Boundary updates
//! run before label updates when both fall on the same epoch.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classical::{
    glcm_haralick, hog_features, lbp_features, sobel_features, stack_features, FeatureError,
    GlcmSpec, WindowSpec,
};
use crate::clustering::{cluster_superpixels, kmeans, ClusteringError};
use crate::imagery::{Dataset, Image};
use crate::loss::{combined_loss, LossConfig, LossError};
use crate::net::{
    adam_step, load_checkpoint, lr_schedule, save_checkpoint, AdamState, Batch, NetError,
    NetTopology, Network,
};
use crate::superpixel::{
    map_labels, pool, slic, FeatureMap, SuperpixelError, SuperpixelSegmentation,
};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("all training images must share one size; found {0}x{1} and {2}x{3}")]
    MixedImageSizes(usize, usize, usize, usize),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Superpixel(#[from] SuperpixelError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad training state file {path}: {reason}")]
    BadState { path: PathBuf, reason: String },
}

/// Schedule and model hyperparameters for a full run.
#[derive(Debug, Clone)]
pub struct IdusConfig {
    /// Number of segmentation classes (cluster count M).
    pub num_classes: usize,
    /// Pseudo-label re-clustering interval in epochs.
    pub update_labels_every: usize,
    /// Superpixel boundary regeneration interval in epochs.
    pub update_boundaries_every: usize,
    pub outer_iterations: usize,
    pub epochs_total: usize,
    pub batch_size: usize,
    /// Target superpixel count per image.
    pub superpixels_per_image: usize,
    pub compactness: f64,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub encoder_widths: Vec<usize>,
    pub seed: u64,
}

impl IdusConfig {
    /// Small configuration sized for commodity-CPU experiments on the
    /// bundled synthetic corpus.
    pub fn desk_scale() -> Self {
        IdusConfig {
            num_classes: 3,
            update_labels_every: 20,
            update_boundaries_every: 20,
            outer_iterations: 5,
            epochs_total: 100,
            batch_size: 4,
            superpixels_per_image: 100,
            compactness: 0.1,
            base_lr: 1e-4,
            weight_decay: 1e-9,
            encoder_widths: vec![16, 32, 64, 128],
            seed: 0,
        }
    }

    /// Full-size schedule (1000 epochs, updates every 200).
    pub fn full_scale() -> Self {
        IdusConfig {
            num_classes: 7,
            update_labels_every: 200,
            update_boundaries_every: 200,
            outer_iterations: 5,
            epochs_total: 1000,
            batch_size: 15,
            superpixels_per_image: 100,
            compactness: 0.1,
            base_lr: 1e-4,
            weight_decay: 1e-9,
            encoder_widths: vec![16, 32, 64, 128],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        if self.num_classes < 2 {
            return Err(DriverError::BadConfig("need at least 2 classes".into()));
        }
        if self.update_labels_every == 0 || self.update_boundaries_every == 0 {
            return Err(DriverError::BadConfig("update intervals must be positive".into()));
        }
        if self.epochs_total != self.outer_iterations * self.update_labels_every {
            return Err(DriverError::BadConfig(format!(
                "epochs_total ({}) must equal outer_iterations x label interval ({}x{})",
                self.epochs_total, self.outer_iterations, self.update_labels_every
            )));
        }
        if self.batch_size == 0 || self.superpixels_per_image == 0 {
            return Err(DriverError::BadConfig("batch size and superpixel target must be positive".into()));
        }
        if self.encoder_widths.is_empty() {
            return Err(DriverError::BadConfig("encoder needs at least one stage".into()));
        }
        Ok(())
    }

    /// Epochs per outer iteration; the learning-rate decay counter resets
    /// at these boundaries.
    pub fn iteration_len(&self) -> usize {
        self.epochs_total / self.outer_iterations
    }
}

/// Live pseudo-label state: per image the superpixel partition `s`, the
/// per-superpixel labels `r`, and the derived per-pixel labels `y`.
/// `y = map_labels(s, r)` holds after every operation.
#[derive(Debug, Clone)]
pub struct PseudoLabelState {
    pub segmentations: Vec<SuperpixelSegmentation>,
    pub superpixel_labels: Vec<Vec<u8>>,
    pub pixel_labels: Vec<Vec<u8>>,
}

impl PseudoLabelState {
    fn from_parts(
        segmentations: Vec<SuperpixelSegmentation>,
        superpixel_labels: Vec<Vec<u8>>,
    ) -> Result<Self, DriverError> {
        let pixel_labels = segmentations
            .iter()
            .zip(&superpixel_labels)
            .map(|(s, r)| map_labels(s, r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PseudoLabelState {
            segmentations,
            superpixel_labels,
            pixel_labels,
        })
    }

    /// Verifies `y = map_labels(s, r)` and label ranges.
    pub fn is_consistent(&self, num_classes: usize) -> bool {
        self.segmentations.len() == self.superpixel_labels.len()
            && self.segmentations.len() == self.pixel_labels.len()
            && self
                .segmentations
                .iter()
                .zip(&self.superpixel_labels)
                .zip(&self.pixel_labels)
                .all(|((s, r), y)| {
                    r.len() == s.num_segments
                        && r.iter().all(|&l| (l as usize) < num_classes)
                        && map_labels(s, r).map(|m| &m == y).unwrap_or(false)
                })
    }

    /// Pixel count per class over the whole training set.
    pub fn class_sizes(&self, num_classes: usize) -> Vec<usize> {
        let mut sizes = vec![0usize; num_classes];
        for y in &self.pixel_labels {
            for &l in y {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

// ---------------------------------------------------------------------------
// Texton initialization

/// Builds a small multi-scale filter bank: Gaussians and
/// Laplacian-of-Gaussians at two scales plus even/odd oriented
/// derivative-of-Gaussian pairs at four orientations per scale
/// (20 channels).
fn filter_bank() -> Vec<(usize, Vec<f64>)> {
    let mut bank = Vec::new();
    for &sigma in &[1.0f64, 2.0] {
        let r = (3.0 * sigma).ceil() as isize;
        let side = (2 * r + 1) as usize;
        let grid = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            let mut k = Vec::with_capacity(side * side);
            for y in -r..=r {
                for x in -r..=r {
                    k.push(f(x as f64, y as f64));
                }
            }
            k
        };
        let g2 = 2.0 * sigma * sigma;
        // Gaussian (L1-normalized low-pass)
        let mut gauss = grid(&|x, y| (-(x * x + y * y) / g2).exp());
        let s: f64 = gauss.iter().sum();
        for v in gauss.iter_mut() {
            *v /= s;
        }
        bank.push((side, gauss));
        // Laplacian of Gaussian, zero-mean
        let mut log = grid(&|x, y| {
            let r2 = x * x + y * y;
            (r2 / g2 - 1.0) * (-r2 / g2).exp()
        });
        zero_mean_l1(&mut log);
        bank.push((side, log));
        for k in 0..4 {
            let theta = std::f64::consts::PI * k as f64 / 4.0;
            let (c, sn) = (theta.cos(), theta.sin());
            // odd: first derivative across the orientation
            let mut odd = grid(&|x, y| {
                let u = c * x + sn * y;
                let v = -sn * x + c * y;
                u * (-(u * u + v * v) / g2).exp()
            });
            zero_mean_l1(&mut odd);
            bank.push((side, odd));
            // even: second derivative across the orientation
            let mut even = grid(&|x, y| {
                let u = c * x + sn * y;
                let v = -sn * x + c * y;
                (u * u / g2 - 0.5) * (-(u * u + v * v) / g2).exp()
            });
            zero_mean_l1(&mut even);
            bank.push((side, even));
        }
    }
    bank
}

fn zero_mean_l1(k: &mut [f64]) {
    let mean: f64 = k.iter().sum::<f64>() / k.len() as f64;
    for v in k.iter_mut() {
        *v -= mean;
    }
    let l1: f64 = k.iter().map(|v| v.abs()).sum();
    if l1 > 0.0 {
        for v in k.iter_mut() {
            *v /= l1;
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i - 1;
    }
    if i >= n {
        i = 2 * n - 1 - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Per-pixel filter-bank responses with reflective padding.
pub fn filter_bank_features(img: &Image) -> FeatureMap {
    let bank = filter_bank();
    let (h, w) = (img.height, img.width);
    let dim = bank.len();
    let mut out = FeatureMap::zeros(h, w, dim);
    for (ci, (side, kernel)) in bank.iter().enumerate() {
        let r = (side / 2) as isize;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in -r..=r {
                    let iy = reflect(y as isize + ky, h);
                    for kx in -r..=r {
                        let ix = reflect(x as isize + kx, w);
                        acc += kernel[((ky + r) * (2 * r + 1) + (kx + r)) as usize]
                            * img.pixels[iy * w + ix];
                    }
                }
                out.at_mut(y, x)[ci] = acc;
            }
        }
    }
    out
}

fn intensity_map(img: &Image) -> FeatureMap {
    FeatureMap::new(img.height, img.width, 1, img.pixels.clone())
}

fn majority_vote(votes: &[usize]) -> u8 {
    // ties break toward the lower class id
    let mut best = 0usize;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    best as u8
}

/// Two-step texton initialization: per-image clustering of filter-bank
/// responses into `TEXTONS_PER_IMAGE` textons, then global clustering of
/// all textons into `num_classes` prototypes. Initial boundaries come from
/// intensity-driven superpixels; each superpixel takes the majority label
/// of its pixels' nearest global prototype.
pub const TEXTONS_PER_IMAGE: usize = 32;

pub fn texton_init(
    dataset: &Dataset,
    num_classes: usize,
    superpixels_per_image: usize,
    compactness: f64,
    seed: u64,
) -> Result<PseudoLabelState, DriverError> {
    if dataset.images.is_empty() {
        return Err(DriverError::EmptyDataset);
    }
    let feats: Vec<FeatureMap> = dataset.images.iter().map(filter_bank_features).collect();
    // step one: per-image textons
    let mut all_textons = Vec::new();
    for (i, f) in feats.iter().enumerate() {
        let model = kmeans(
            &f.values,
            f.dim,
            TEXTONS_PER_IMAGE.min(f.height * f.width),
            seed.wrapping_add(0x7065_7231).wrapping_add(i as u64 * 131),
            2,
            25,
        )?;
        all_textons.extend_from_slice(&model.centroids);
    }
    // step two: global prototypes
    let dim = feats[0].dim;
    let global = kmeans(
        &all_textons,
        dim,
        num_classes,
        seed.wrapping_add(0x676c_6f62),
        10,
        50,
    )?;
    let mut segmentations = Vec::with_capacity(dataset.images.len());
    let mut superpixel_labels = Vec::with_capacity(dataset.images.len());
    for (img, f) in dataset.images.iter().zip(&feats) {
        let seg = slic(
            &intensity_map(img),
            &img.id,
            superpixels_per_image,
            compactness,
            10,
        )?;
        // nearest global prototype per pixel, then majority per superpixel
        let mut votes = vec![vec![0usize; num_classes]; seg.num_segments];
        for y in 0..f.height {
            for x in 0..f.width {
                let p = f.at(y, x);
                let mut best = 0usize;
                let mut bd = f64::INFINITY;
                for m in 0..num_classes {
                    let c = &global.centroids[m * dim..(m + 1) * dim];
                    let d: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < bd {
                        bd = d;
                        best = m;
                    }
                }
                votes[seg.segment_of[y * f.width + x] as usize][best] += 1;
            }
        }
        superpixel_labels.push(votes.iter().map(|v| majority_vote(v)).collect());
        segmentations.push(seg);
    }
    PseudoLabelState::from_parts(segmentations, superpixel_labels)
}

// ---------------------------------------------------------------------------
// Training phases

fn check_uniform_size(dataset: &Dataset) -> Result<(usize, usize), DriverError> {
    let first = &dataset.images[0];
    for img in &dataset.images[1..] {
        if img.height != first.height || img.width != first.width {
            return Err(DriverError::MixedImageSizes(
                first.height,
                first.width,
                img.height,
                img.width,
            ));
        }
    }
    Ok((first.height, first.width))
}

fn images_to_batch(images: &[&Image]) -> Batch {
    let (h, w) = (images[0].height, images[0].width);
    let mut b = Batch::zeros(images.len(), 1, h, w);
    for (n, img) in images.iter().enumerate() {
        b.data[n * h * w..(n + 1) * h * w].copy_from_slice(&img.pixels);
    }
    b
}

fn probs_to_feature_map(probs: &Batch) -> FeatureMap {
    // single-item batch -> HxWxC feature map
    debug_assert_eq!(probs.n, 1);
    let (c, h, w) = (probs.c, probs.h, probs.w);
    let mut f = FeatureMap::zeros(h, w, c);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                f.at_mut(y, x)[ch] = probs.data[(ch * h + y) * w + x];
            }
        }
    }
    f
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed ^ 0x5DEE_CE66_D1CE_5EEDu64.wrapping_mul(epoch as u64 + 1),
    )
}

/// One pass over the training set against the current pseudo-labels.
/// Returns the mean minibatch loss.
pub fn train_epoch(
    net: &mut Network,
    adam: &mut AdamState,
    state: &PseudoLabelState,
    dataset: &Dataset,
    cfg: &IdusConfig,
    epoch: usize,
) -> Result<f64, DriverError> {
    let (h, w) = check_uniform_size(dataset)?;
    let lr = lr_schedule(epoch % cfg.iteration_len(), cfg.base_lr);
    let loss_cfg = LossConfig::from_labels(
        state.pixel_labels.iter().map(|y| y.as_slice()),
        cfg.num_classes,
    );
    let mut order: Vec<usize> = (0..dataset.images.len()).collect();
    order.shuffle(&mut epoch_rng(cfg.seed, epoch));
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(cfg.batch_size) {
        let images: Vec<&Image> = chunk.iter().map(|&i| &dataset.images[i]).collect();
        let x = images_to_batch(&images);
        let mut targets = Vec::with_capacity(chunk.len() * h * w);
        for &i in chunk {
            targets.extend_from_slice(&state.pixel_labels[i]);
        }
        let cache = net.forward_train(&x)?;
        let (loss, dlogits) = combined_loss(&cache.probs, &targets, &loss_cfg)?;
        if !loss.is_finite() {
            return Err(DriverError::Divergence { epoch });
        }
        let grads = net.backward(&cache, &dlogits);
        adam_step(net, &grads, adam, lr)?;
        total += loss;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

/// Regenerates each image's superpixel boundaries from the current softmax
/// features concatenated with intensity, transferring labels by pixel
/// majority vote of the previous per-pixel labels.
pub fn update_boundaries(
    net: &Network,
    state: &mut PseudoLabelState,
    dataset: &Dataset,
    cfg: &IdusConfig,
) -> Result<(), DriverError> {
    for (i, img) in dataset.images.iter().enumerate() {
        let probs = net.forward_infer(&images_to_batch(&[img]))?;
        let pf = probs_to_feature_map(&probs);
        let intensity = intensity_map(img);
        let merged = FeatureMap::concat(&[&pf, &intensity])?;
        let seg = slic(
            &merged,
            &img.id,
            cfg.superpixels_per_image,
            cfg.compactness,
            10,
        )?;
        let prev_y = &state.pixel_labels[i];
        let mut votes = vec![vec![0usize; cfg.num_classes]; seg.num_segments];
        for (p, &s) in seg.segment_of.iter().enumerate() {
            votes[s as usize][prev_y[p] as usize] += 1;
        }
        let r: Vec<u8> = votes.iter().map(|v| majority_vote(v)).collect();
        state.pixel_labels[i] = map_labels(&seg, &r)?;
        state.superpixel_labels[i] = r;
        state.segmentations[i] = seg;
    }
    Ok(())
}

/// Re-clusters pooled regional features across the whole training set into
/// fresh pseudo-labels.
pub fn update_pseudo_labels(
    net: &Network,
    state: &mut PseudoLabelState,
    dataset: &Dataset,
    cfg: &IdusConfig,
    epoch: usize,
) -> Result<(), DriverError> {
    let mut pooled = Vec::with_capacity(dataset.images.len());
    for (i, img) in dataset.images.iter().enumerate() {
        let probs = net.forward_infer(&images_to_batch(&[img]))?;
        let pf = probs_to_feature_map(&probs);
        pooled.push(pool(&pf, &state.segmentations[i])?);
    }
    let labels = cluster_superpixels(
        &pooled,
        cfg.num_classes,
        cfg.seed
            .wrapping_add(0x636c_7573)
            .wrapping_add(epoch as u64 * 977),
        10,
    )?;
    for (i, r) in labels.into_iter().enumerate() {
        state.pixel_labels[i] = map_labels(&state.segmentations[i], &r)?;
        state.superpixel_labels[i] = r;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Schedule

/// One epoch's worth of schedule information, derivable without training.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEvent {
    pub epoch: usize,
    pub lr: f64,
    pub boundary_update: bool,
    pub label_update: bool,
}

/// Dry-run of the training schedule: which epochs trigger which updates
/// and at what learning rate, exactly as `run_idus` executes them.
pub fn dry_run_schedule(cfg: &IdusConfig) -> Vec<ScheduleEvent> {
    (0..cfg.epochs_total)
        .map(|epoch| ScheduleEvent {
            epoch,
            lr: lr_schedule(epoch % cfg.iteration_len(), cfg.base_lr),
            boundary_update: (epoch + 1) % cfg.update_boundaries_every == 0,
            label_update: (epoch + 1) % cfg.update_labels_every == 0,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Full runs

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where to drop periodic and diagnostic training checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    /// Resume from a training-state directory written by a previous run.
    pub resume_from: Option<PathBuf>,
    /// Stop after this many epochs (for interruption testing); the run
    /// still writes a checkpoint if a directory is configured.
    pub stop_after: Option<usize>,
}

pub struct IdusOutcome {
    pub net: Network,
    pub state: PseudoLabelState,
    /// Final per-pixel labels: argmax of the inference softmax.
    pub label_maps: Vec<Vec<u8>>,
    pub history: Vec<String>,
    pub completed_epochs: usize,
}

/// Runs the full alternating scheme: initialization, `epochs_total`
/// training epochs with boundary updates every `update_boundaries_every`
/// epochs and label updates every `update_labels_every` (boundaries
/// first when both trigger), then argmax inference for the final maps.
pub fn run_idus(
    dataset: &Dataset,
    cfg: &IdusConfig,
    opts: &RunOptions,
) -> Result<IdusOutcome, DriverError> {
    cfg.validate()?;
    if dataset.images.is_empty() {
        return Err(DriverError::EmptyDataset);
    }
    check_uniform_size(dataset)?;
    let mut history = Vec::new();
    let topology = NetTopology {
        in_channels: 1,
        encoder_widths: cfg.encoder_widths.clone(),
        num_classes: cfg.num_classes,
    };
    let (mut net, mut adam, mut state, start_epoch) = match &opts.resume_from {
        Some(dir) => {
            let (epoch, net, adam, state) = load_training_state(dir)?;
            history.push(format!("resume epoch {epoch}"));
            (net, adam, state, epoch)
        }
        None => {
            let net = Network::init(&topology, cfg.seed.wrapping_add(0x6e65_74));
            let adam = {
                let mut n = net.clone();
                AdamState::new(&mut n, cfg.weight_decay)
            };
            let state = texton_init(
                dataset,
                cfg.num_classes,
                cfg.superpixels_per_image,
                cfg.compactness,
                cfg.seed,
            )?;
            let sizes = state.class_sizes(cfg.num_classes);
            history.push(format!("init class-sizes {}", join_sizes(&sizes)));
            (net, adam, state, 0)
        }
    };
    let mut epoch = start_epoch;
    while epoch < cfg.epochs_total {
        if let Some(stop) = opts.stop_after {
            if epoch - start_epoch >= stop {
                break;
            }
        }
        let loss = match train_epoch(&mut net, &mut adam, &state, dataset, cfg, epoch) {
            Ok(l) => l,
            Err(e) => {
                if let Some(dir) = &opts.checkpoint_dir {
                    let p = dir.join(format!("diverged-epoch-{epoch}"));
                    let _ = save_training_state(&p, epoch, &mut net, &adam, &state);
                    history.push(format!("abort checkpoint {}", p.display()));
                }
                return Err(e);
            }
        };
        let lr = lr_schedule(epoch % cfg.iteration_len(), cfg.base_lr);
        history.push(format!("epoch {epoch} lr {lr:e} loss {loss:.6}"));
        epoch += 1;
        if epoch % cfg.update_boundaries_every == 0 {
            update_boundaries(&net, &mut state, dataset, cfg)?;
            let total: usize = state.segmentations.iter().map(|s| s.num_segments).sum();
            history.push(format!("update boundaries epoch {epoch} segments {total}"));
        }
        if epoch % cfg.update_labels_every == 0 {
            update_pseudo_labels(&net, &mut state, dataset, cfg, epoch)?;
            let sizes = state.class_sizes(cfg.num_classes);
            history.push(format!(
                "update labels epoch {epoch} class-sizes {}",
                join_sizes(&sizes)
            ));
            if let Some(dir) = &opts.checkpoint_dir {
                let p = dir.join(format!("epoch-{epoch}"));
                save_training_state(&p, epoch, &mut net, &adam, &state)?;
            }
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        let p = dir.join(format!("epoch-{epoch}"));
        save_training_state(&p, epoch, &mut net, &adam, &state)?;
    }
    let mut label_maps = Vec::with_capacity(dataset.images.len());
    for img in &dataset.images {
        let probs = net.forward_infer(&images_to_batch(&[img]))?;
        label_maps.push(argmax_labels(&probs));
    }
    Ok(IdusOutcome {
        net,
        state,
        label_maps,
        history,
        completed_epochs: epoch,
    })
}

fn join_sizes(sizes: &[usize]) -> String {
    sizes
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(":")
}

/// Per-pixel argmax over the class channels of a single-item batch.
pub fn argmax_labels(probs: &Batch) -> Vec<u8> {
    let plane = probs.h * probs.w;
    (0..plane)
        .map(|i| {
            let mut best = 0usize;
            let mut bv = f64::NEG_INFINITY;
            for c in 0..probs.c {
                let v = probs.data[c * plane + i];
                if v > bv {
                    bv = v;
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Baseline pipeline

/// Feature recipe for the classical co-segmentation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineRecipe {
    /// Four Haralick statistics from gray-level co-occurrence matrices.
    Glcm,
    /// Sobel window statistics + oriented-gradient histograms + uniform
    /// local binary patterns (2+9+59 channels before standardization).
    Zare,
}

/// Classical four-step co-segmentation: window features, superpixels over
/// the feature maps, pooled-feature global k-means with many restarts,
/// and label broadcast back to pixels.
pub fn run_baseline(
    dataset: &Dataset,
    recipe: BaselineRecipe,
    num_classes: usize,
    superpixels_per_image: usize,
    seed: u64,
) -> Result<Vec<Vec<u8>>, DriverError> {
    if dataset.images.is_empty() {
        return Err(DriverError::EmptyDataset);
    }
    let win = WindowSpec::default();
    let per_image: Vec<Vec<FeatureMap>> = dataset
        .images
        .iter()
        .map(|img| -> Result<Vec<FeatureMap>, DriverError> {
            Ok(match recipe {
                BaselineRecipe::Glcm => {
                    vec![glcm_haralick(img, &win, &GlcmSpec::default())?]
                }
                BaselineRecipe::Zare => vec![
                    sobel_features(img, &win)?,
                    hog_features(img, &win, 9)?,
                    lbp_features(img, &win, 1)?,
                ],
            })
        })
        .collect::<Result<_, _>>()?;
    let stacked = stack_features(&per_image)?;
    let mut pooled = Vec::with_capacity(dataset.images.len());
    let mut segs = Vec::with_capacity(dataset.images.len());
    for (img, f) in dataset.images.iter().zip(&stacked) {
        let seg = slic(f, &img.id, superpixels_per_image, 0.1, 10)?;
        pooled.push(pool(f, &seg)?);
        segs.push(seg);
    }
    let labels = cluster_superpixels(&pooled, num_classes, seed, 100)?;
    let mut maps = Vec::with_capacity(dataset.images.len());
    for (seg, r) in segs.iter().zip(&labels) {
        maps.push(map_labels(seg, r)?);
    }
    Ok(maps)
}

// ---------------------------------------------------------------------------
// Training-state checkpoints (net + optimizer + pseudo-labels + epoch)

const STATE_MAGIC: &[u8; 8] = b"IDUSSTA1";
const ADAM_MAGIC: &[u8; 8] = b"IDUSADM1";

/// Writes a resumable training snapshot into `dir`: network checkpoint,
/// optimizer moments, pseudo-label state, and the epoch counter.
pub fn save_training_state(
    dir: &Path,
    epoch: usize,
    net: &mut Network,
    adam: &AdamState,
    state: &PseudoLabelState,
) -> Result<(), DriverError> {
    let io = |path: &Path, source: std::io::Error| DriverError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    save_checkpoint(net, &dir.join("net.ckpt"))?;

    let mut adam_bytes = Vec::new();
    adam_bytes.extend_from_slice(ADAM_MAGIC);
    adam_bytes.extend_from_slice(&adam.step.to_le_bytes());
    adam_bytes.extend_from_slice(&adam.weight_decay.to_le_bytes());
    adam_bytes.extend_from_slice(&(adam.moments.len() as u32).to_le_bytes());
    for (m, v) in &adam.moments {
        adam_bytes.extend_from_slice(&(m.len() as u64).to_le_bytes());
        for &x in m.iter().chain(v.iter()) {
            adam_bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let adam_path = dir.join("adam.bin");
    fs::write(&adam_path, adam_bytes).map_err(|e| io(&adam_path, e))?;

    let mut st = Vec::new();
    st.extend_from_slice(STATE_MAGIC);
    st.extend_from_slice(&(epoch as u64).to_le_bytes());
    st.extend_from_slice(&(state.segmentations.len() as u32).to_le_bytes());
    for (seg, r) in state.segmentations.iter().zip(&state.superpixel_labels) {
        let id = seg.image_id.as_bytes();
        st.extend_from_slice(&(id.len() as u32).to_le_bytes());
        st.extend_from_slice(id);
        st.extend_from_slice(&(seg.height as u32).to_le_bytes());
        st.extend_from_slice(&(seg.width as u32).to_le_bytes());
        st.extend_from_slice(&(seg.num_segments as u32).to_le_bytes());
        for &s in &seg.segment_of {
            st.extend_from_slice(&s.to_le_bytes());
        }
        st.extend_from_slice(&(r.len() as u32).to_le_bytes());
        st.extend_from_slice(r);
    }
    let st_path = dir.join("state.bin");
    fs::write(&st_path, st).map_err(|e| io(&st_path, e))
}

/// Loads a snapshot written by [`save_training_state`].
pub fn load_training_state(
    dir: &Path,
) -> Result<(usize, Network, AdamState, PseudoLabelState), DriverError> {
    let net = load_checkpoint(&dir.join("net.ckpt"))?;

    let adam_path = dir.join("adam.bin");
    let bytes = fs::read(&adam_path).map_err(|source| DriverError::Io {
        path: adam_path.clone(),
        source,
    })?;
    let bad = |path: &Path, reason: &str| DriverError::BadState {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 28 || &bytes[0..8] != ADAM_MAGIC {
        return Err(bad(&adam_path, "bad magic"));
    }
    let step = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let weight_decay = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let count = u32::from_le_bytes(bytes[24..28].try_into().unwrap()) as usize;
    let mut pos = 28usize;
    let mut moments = Vec::with_capacity(count);
    for _ in 0..count {
        if pos + 8 > bytes.len() {
            return Err(bad(&adam_path, "truncated"));
        }
        let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        if pos + 16 * len > bytes.len() {
            return Err(bad(&adam_path, "truncated"));
        }
        let read = |pos: usize, k: usize| {
            f64::from_le_bytes(bytes[pos + k * 8..pos + k * 8 + 8].try_into().unwrap())
        };
        let m: Vec<f64> = (0..len).map(|k| read(pos, k)).collect();
        pos += 8 * len;
        let v: Vec<f64> = (0..len).map(|k| read(pos, k)).collect();
        pos += 8 * len;
        moments.push((m, v));
    }
    let adam = AdamState {
        step,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay,
        moments,
    };

    let st_path = dir.join("state.bin");
    let bytes = fs::read(&st_path).map_err(|source| DriverError::Io {
        path: st_path.clone(),
        source,
    })?;
    if bytes.len() < 20 || &bytes[0..8] != STATE_MAGIC {
        return Err(bad(&st_path, "bad magic"));
    }
    let epoch = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let n_images = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let mut pos = 20usize;
    let mut segmentations = Vec::with_capacity(n_images);
    let mut superpixel_labels = Vec::with_capacity(n_images);
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], DriverError> {
        if *pos + n > bytes.len() {
            return Err(bad(&st_path, "truncated"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    for _ in 0..n_images {
        let id_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let image_id = String::from_utf8_lossy(take(&mut pos, id_len)?).into_owned();
        let height = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let num_segments = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let raw = take(&mut pos, height * width * 4)?;
        let segment_of: Vec<u32> = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let r_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let r = take(&mut pos, r_len)?.to_vec();
        segmentations.push(SuperpixelSegmentation {
            height,
            width,
            segment_of,
            num_segments,
            image_id,
        });
        superpixel_labels.push(r);
    }
    let state = PseudoLabelState::from_parts(segmentations, superpixel_labels)?;
    Ok((epoch, net, adam, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::{generate_synthetic_dataset, SyntheticSpec};
    use crate::net::softmax_channels;

    fn tiny_cfg() -> IdusConfig {
        IdusConfig {
            num_classes: 3,
            update_labels_every: 2,
            update_boundaries_every: 2,
            outer_iterations: 1,
            epochs_total: 2,
            batch_size: 2,
            superpixels_per_image: 16,
            compactness: 0.1,
            base_lr: 1e-4,
            weight_decay: 1e-9,
            encoder_widths: vec![3, 4],
            seed: 7,
        }
    }

    fn tiny_dataset(count: usize, size: usize, seed: u64) -> Dataset {
        let spec = SyntheticSpec {
            num_classes: 3,
            count,
            size,
            regions_per_image: 3,
            speckle: 0.08,
        };
        generate_synthetic_dataset(&spec, seed).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(IdusConfig::desk_scale().validate().is_ok());
        assert!(IdusConfig::full_scale().validate().is_ok());
        let mut bad = IdusConfig::desk_scale();
        bad.epochs_total = 99;
        assert!(bad.validate().is_err());
        let mut bad = IdusConfig::desk_scale();
        bad.update_boundaries_every = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn filter_bank_has_20_channels_and_zero_mean_bandpass() {
        let bank = filter_bank();
        assert_eq!(bank.len(), 20);
        // every channel except the two Gaussians is zero-mean
        for (i, (_, k)) in bank.iter().enumerate() {
            let mean: f64 = k.iter().sum::<f64>() / k.len() as f64;
            if i % 10 == 0 {
                assert!(k.iter().all(|&v| v >= 0.0));
                assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            } else {
                assert!(mean.abs() < 1e-12, "channel {i} mean {mean}");
            }
        }
    }

    #[test]
    fn texton_init_deterministic_and_consistent() {
        let ds = tiny_dataset(3, 32, 5);
        let a = texton_init(&ds, 3, 16, 0.1, 9).unwrap();
        let b = texton_init(&ds, 3, 16, 0.1, 9).unwrap();
        assert!(a.is_consistent(3));
        assert_eq!(a.superpixel_labels, b.superpixel_labels);
        assert_eq!(a.pixel_labels, b.pixel_labels);
    }

    #[test]
    fn texton_init_separates_pure_textures() {
        // three images, each one pure texture with a distinct intensity
        // plus mild noise: majority labels must form a bijection onto the
        // class set
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut images = Vec::new();
        for (i, level) in [0.1f64, 0.5, 0.9].iter().enumerate() {
            let pixels: Vec<f64> = (0..32 * 32)
                .map(|_| (level + (rng.gen::<f64>() - 0.5) * 0.02).clamp(0.0, 1.0))
                .collect();
            images.push(Image {
                id: format!("pure{i}"),
                height: 32,
                width: 32,
                pixels,
            });
        }
        let ds = Dataset {
            images,
            masks: vec![None, None, None],
            num_classes: 3,
        };
        let state = texton_init(&ds, 3, 16, 0.1, 11).unwrap();
        let mut majors = Vec::new();
        for y in &state.pixel_labels {
            let mut votes = vec![0usize; 3];
            for &l in y {
                votes[l as usize] += 1;
            }
            majors.push(majority_vote(&votes));
        }
        majors.sort_unstable();
        assert_eq!(majors, vec![0, 1, 2]);
    }

    #[test]
    fn train_epoch_deterministic() {
        let ds = tiny_dataset(4, 32, 21);
        let cfg = tiny_cfg();
        let state = texton_init(&ds, 3, 8, 0.1, cfg.seed).unwrap();
        let run = || {
            let topo = NetTopology {
                in_channels: 1,
                encoder_widths: cfg.encoder_widths.clone(),
                num_classes: 3,
            };
            let mut net = Network::init(&topo, 1);
            let mut adam = AdamState::new(&mut net, cfg.weight_decay);
            let loss = train_epoch(&mut net, &mut adam, &state, &ds, &cfg, 0).unwrap();
            let mut params = Vec::new();
            net.visit_params_mut(&mut |_, t| params.push(t.clone()));
            (loss, params)
        };
        let (l1, p1) = run();
        let (l2, p2) = run();
        assert_eq!(l1, l2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn train_epoch_zero_lr_keeps_params() {
        let ds = tiny_dataset(4, 32, 22);
        let mut cfg = tiny_cfg();
        cfg.base_lr = 0.0;
        let state = texton_init(&ds, 3, 8, 0.1, cfg.seed).unwrap();
        let topo = NetTopology {
            in_channels: 1,
            encoder_widths: cfg.encoder_widths.clone(),
            num_classes: 3,
        };
        let mut net = Network::init(&topo, 2);
        let mut before = Vec::new();
        net.visit_params_mut(&mut |_, t| before.push(t.clone()));
        let mut adam = AdamState::new(&mut net, cfg.weight_decay);
        let loss = train_epoch(&mut net, &mut adam, &state, &ds, &cfg, 0).unwrap();
        assert!(loss.is_finite());
        let mut after = Vec::new();
        net.visit_params_mut(&mut |_, t| after.push(t.clone()));
        assert_eq!(before, after);
    }

    #[test]
    fn updates_preserve_consistency() {
        let ds = tiny_dataset(3, 32, 23);
        let cfg = tiny_cfg();
        let mut state = texton_init(&ds, 3, 8, 0.1, cfg.seed).unwrap();
        let topo = NetTopology {
            in_channels: 1,
            encoder_widths: cfg.encoder_widths.clone(),
            num_classes: 3,
        };
        let net = Network::init(&topo, 4);
        update_boundaries(&net, &mut state, &ds, &cfg).unwrap();
        assert!(state.is_consistent(3));
        update_pseudo_labels(&net, &mut state, &ds, &cfg, 1).unwrap();
        assert!(state.is_consistent(3));
    }

    #[test]
    fn boundary_update_identity_segmentation_keeps_labels() {
        // if the new segmentation equals the old, majority transfer of a
        // piecewise-constant labeling reproduces it exactly; emulate by
        // transferring onto the same segmentation manually
        let ds = tiny_dataset(1, 32, 24);
        let cfg = tiny_cfg();
        let state = texton_init(&ds, 3, 8, 0.1, cfg.seed).unwrap();
        let seg = &state.segmentations[0];
        let prev_y = &state.pixel_labels[0];
        let mut votes = vec![vec![0usize; 3]; seg.num_segments];
        for (p, &s) in seg.segment_of.iter().enumerate() {
            votes[s as usize][prev_y[p] as usize] += 1;
        }
        let r: Vec<u8> = votes.iter().map(|v| majority_vote(v)).collect();
        assert_eq!(r, state.superpixel_labels[0]);
    }

    #[test]
    fn pseudo_label_fixed_point_up_to_permutation() {
        // piecewise one-hot probabilities aligned with the current
        // segment labels: re-clustering must reproduce the labeling up to
        // a class permutation
        let ds = tiny_dataset(2, 32, 25);
        let cfg = tiny_cfg();
        let mut state = texton_init(&ds, 3, 8, 0.1, cfg.seed).unwrap();
        let mut pooled = Vec::new();
        for i in 0..ds.images.len() {
            let seg = &state.segmentations[i];
            let y = &state.pixel_labels[i];
            let mut f = FeatureMap::zeros(seg.height, seg.width, 3);
            for p in 0..y.len() {
                f.values[p * 3 + y[p] as usize] = 1.0;
            }
            pooled.push(pool(&f, seg).unwrap());
        }
        let old = state.superpixel_labels.clone();
        let labels = cluster_superpixels(&pooled, 3, 99, 10).unwrap();
        // build the permutation from old -> new on first occurrence and
        // check it is consistent everywhere
        let mut perm = [usize::MAX; 3];
        for (img, r) in labels.iter().enumerate() {
            for (k, &new) in r.iter().enumerate() {
                let o = old[img][k] as usize;
                if perm[o] == usize::MAX {
                    perm[o] = new as usize;
                } else {
                    assert_eq!(perm[o], new as usize, "img {img} segment {k}");
                }
            }
        }
        for i in 0..ds.images.len() {
            state.superpixel_labels[i] = labels[i].clone();
        }
    }

    #[test]
    fn schedule_tiny_run_one_update_each() {
        let mut cfg = tiny_cfg();
        cfg.update_labels_every = 1;
        cfg.update_boundaries_every = 1;
        cfg.epochs_total = 1;
        cfg.outer_iterations = 1;
        let sched = dry_run_schedule(&cfg);
        assert_eq!(sched.len(), 1);
        assert!(sched[0].boundary_update);
        assert!(sched[0].label_update);
    }

    #[test]
    fn schedule_full_scale_counts_and_lr() {
        let cfg = IdusConfig::full_scale();
        let sched = dry_run_schedule(&cfg);
        assert_eq!(sched.len(), 1000);
        assert_eq!(sched.iter().filter(|e| e.boundary_update).count(), 5);
        assert_eq!(sched.iter().filter(|e| e.label_update).count(), 5);
        for iter in 0..5 {
            for (off, expect) in [(0, 1e-4), (50, 1e-5), (100, 1e-6), (150, 1e-7)] {
                let lr = sched[iter * 200 + off].lr;
                assert!((lr - expect).abs() < expect * 1e-9, "lr {lr} expect {expect}");
            }
        }
    }

    #[test]
    fn run_idus_deterministic_and_counts_epochs() {
        let ds = tiny_dataset(4, 32, 26);
        let cfg = tiny_cfg();
        let a = run_idus(&ds, &cfg, &RunOptions::default()).unwrap();
        let b = run_idus(&ds, &cfg, &RunOptions::default()).unwrap();
        assert_eq!(a.completed_epochs, cfg.epochs_total);
        assert_eq!(a.label_maps, b.label_maps);
        assert_eq!(a.history, b.history);
        assert!(a.state.is_consistent(3));
    }

    #[test]
    fn run_idus_resume_matches_uninterrupted() {
        let ds = tiny_dataset(4, 32, 27);
        let mut cfg = tiny_cfg();
        cfg.epochs_total = 4;
        cfg.outer_iterations = 2;
        let full = run_idus(&ds, &cfg, &RunOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let opts1 = RunOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            resume_from: None,
            stop_after: Some(2),
        };
        let partial = run_idus(&ds, &cfg, &opts1).unwrap();
        assert_eq!(partial.completed_epochs, 2);
        let opts2 = RunOptions {
            checkpoint_dir: None,
            resume_from: Some(dir.path().join("epoch-2")),
            stop_after: None,
        };
        let resumed = run_idus(&ds, &cfg, &opts2).unwrap();
        assert_eq!(resumed.completed_epochs, 4);
        assert_eq!(full.label_maps, resumed.label_maps);
    }

    #[test]
    fn training_state_round_trip() {
        let ds = tiny_dataset(2, 32, 28);
        let cfg = tiny_cfg();
        let state = texton_init(&ds, 3, 8, 0.1, cfg.seed).unwrap();
        let topo = NetTopology {
            in_channels: 1,
            encoder_widths: vec![3, 4],
            num_classes: 3,
        };
        let mut net = Network::init(&topo, 6);
        let mut adam = AdamState::new(&mut net, 1e-9);
        adam.step = 17;
        adam.moments[0].0[0] = 0.5;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap");
        save_training_state(&p, 9, &mut net, &adam, &state).unwrap();
        let (epoch, mut net2, adam2, state2) = load_training_state(&p).unwrap();
        assert_eq!(epoch, 9);
        assert_eq!(adam2.step, 17);
        assert_eq!(adam2.moments, adam.moments);
        assert_eq!(state2.superpixel_labels, state.superpixel_labels);
        assert_eq!(state2.pixel_labels, state.pixel_labels);
        let mut pa = Vec::new();
        net.visit_params_mut(&mut |_, t| pa.push(t.clone()));
        let mut pb = Vec::new();
        net2.visit_params_mut(&mut |_, t| pb.push(t.clone()));
        assert_eq!(pa, pb);
    }

    #[test]
    fn baseline_single_class_is_constant() {
        // num_classes >= 2 is enforced by IdusConfig but run_baseline
        // itself accepts M=1 for this degenerate check
        let ds = tiny_dataset(2, 32, 29);
        let maps = run_baseline(&ds, BaselineRecipe::Glcm, 1, 8, 1).unwrap();
        for m in &maps {
            assert!(m.iter().all(|&l| l == 0));
        }
    }

    #[test]
    fn baseline_two_distinct_textures_high_purity() {
        // two images of strongly distinct pure textures: smooth dark vs
        // high-frequency bright checker; per-image purity must be high
        let mut images = Vec::new();
        for i in 0..2 {
            let pixels: Vec<f64> = (0..48 * 48)
                .map(|p| {
                    let (y, x) = (p / 48, p % 48);
                    if i == 0 {
                        0.15
                    } else if (y + x) % 2 == 0 {
                        0.9
                    } else {
                        0.2
                    }
                })
                .collect();
            images.push(Image {
                id: format!("tex{i}"),
                height: 48,
                width: 48,
                pixels,
            });
        }
        let ds = Dataset {
            images,
            masks: vec![None, None],
            num_classes: 2,
        };
        let maps = run_baseline(&ds, BaselineRecipe::Glcm, 2, 16, 3).unwrap();
        for m in &maps {
            let ones = m.iter().filter(|&&l| l == 1).count();
            let purity = ones.max(m.len() - ones) as f64 / m.len() as f64;
            assert!(purity >= 0.95, "purity {purity}");
        }
        // and the two images land in different classes
        assert_ne!(maps[0][0], maps[1][0]);
        // the gradient/pattern recipe also produces a valid two-class
        // labeling (on this adversarial pair its reflect-padded border
        // windows become outliers, so cluster semantics differ)
        let maps = run_baseline(&ds, BaselineRecipe::Zare, 2, 16, 3).unwrap();
        assert_eq!(maps.len(), 2);
        for m in &maps {
            assert_eq!(m.len(), 48 * 48);
            assert!(m.iter().all(|&l| l < 2));
        }
    }

    #[test]
    fn probs_to_feature_map_matches_layout() {
        let mut probs = Batch::zeros(1, 2, 2, 2);
        for (i, v) in probs.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let f = probs_to_feature_map(&softmax_channels(&probs));
        let s = softmax_channels(&probs);
        assert_eq!(f.at(0, 0)[0], s.data[0]);
        assert_eq!(f.at(0, 0)[1], s.data[4]);
        assert_eq!(f.at(1, 1)[0], s.data[3]);
    }

    #[test]
    fn argmax_labels_picks_max_channel() {
        let mut probs = Batch::zeros(1, 3, 1, 2);
        // pixel 0: class 2 wins; pixel 1: class 0 wins
        probs.data = vec![0.1, 0.6, 0.2, 0.1, 0.7, 0.3];
        assert_eq!(argmax_labels(&probs), vec![2, 0]);
    }
}
