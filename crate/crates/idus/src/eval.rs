//! Unsupervised-segmentation scoring: confusion matrices against
//! partially labeled ground truth, optimal cluster-to-class column
//! assignment, and summary metrics, plus a plain-text report artifact.
//!
//! Predicted cluster ids carry no semantics, so scoring first re-sorts the
//! confusion-matrix columns to maximize the row-normalized diagonal. For
//! small matrices the optimum comes from exhaustive permutation search;
//! larger ones use an optimal linear-assignment solver. Both agree, which
//! the tests exploit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imagery::UNLABELED;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and truth sizes differ: {pred} vs {truth}")]
    SizeMismatch { pred: usize, truth: usize },
    #[error("label {0} out of range for {1} classes")]
    LabelOutOfRange(u8, usize),
    #[error("no labeled pixels to evaluate")]
    NoLabeledPixels,
    #[error("cluster count must equal class count for evaluation")]
    NonSquare,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Rows are ground-truth classes, columns predicted clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    /// `counts[g][p]`, row-major.
    pub counts: Vec<u64>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            class_names: (0..num_classes).map(|i| format!("class{i}")).collect(),
        }
    }

    #[inline]
    pub fn at(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Row-normalized proportions; all-zero rows stay all-zero.
    pub fn row_normalized(&self) -> Vec<f64> {
        let m = self.num_classes;
        let mut out = vec![0.0; m * m];
        for g in 0..m {
            let row: u64 = (0..m).map(|p| self.at(g, p)).sum();
            if row > 0 {
                for p in 0..m {
                    out[g * m + p] = self.at(g, p) as f64 / row as f64;
                }
            }
        }
        out
    }

    /// Applies a column permutation: new column `i` is old column `perm[i]`.
    pub fn permute_columns(&self, perm: &[usize]) -> ConfusionMatrix {
        let m = self.num_classes;
        let mut out = self.clone();
        for g in 0..m {
            for (i, &p) in perm.iter().enumerate() {
                out.counts[g * m + i] = self.at(g, p);
            }
        }
        out
    }
}

/// Tallies labeled pixels over a set of images. `preds[i]` and `truths[i]`
/// are per-pixel labels for image `i`; `UNLABELED` truth pixels are
/// skipped.
pub fn confusion(
    preds: &[&[u8]],
    truths: &[&[u8]],
    num_classes: usize,
) -> Result<ConfusionMatrix, EvalError> {
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (pred, truth) in preds.iter().zip(truths.iter()) {
        if pred.len() != truth.len() {
            return Err(EvalError::SizeMismatch {
                pred: pred.len(),
                truth: truth.len(),
            });
        }
        for (&p, &t) in pred.iter().zip(truth.iter()) {
            if t == UNLABELED {
                continue;
            }
            if t as usize >= num_classes {
                return Err(EvalError::LabelOutOfRange(t, num_classes));
            }
            if p as usize >= num_classes {
                return Err(EvalError::LabelOutOfRange(p, num_classes));
            }
            cm.counts[t as usize * num_classes + p as usize] += 1;
        }
    }
    Ok(cm)
}

/// Finds the column permutation maximizing the row-normalized diagonal sum
/// and returns it with the reordered matrix. Exhaustive for up to 8
/// classes; Hungarian-style assignment beyond that. Ties go to the
/// lexicographically smallest permutation.
pub fn best_assignment(cm: &ConfusionMatrix) -> Result<(Vec<usize>, ConfusionMatrix), EvalError> {
    let m = cm.num_classes;
    if m == 0 {
        return Err(EvalError::NonSquare);
    }
    let score = cm.row_normalized();
    let perm = if m <= 8 {
        exhaustive_assignment(&score, m)
    } else {
        hungarian_max(&score, m)
    };
    let reordered = cm.permute_columns(&perm);
    Ok((perm, reordered))
}

pub fn exhaustive_assignment(score: &[f64], m: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = perm.clone();
    let mut best_val = f64::NEG_INFINITY;
    permute_visit(&mut perm, 0, &mut |p| {
        let val: f64 = (0..m).map(|g| score[g * m + p[g]]).sum();
        // strict improvement only: heap's order is not lexicographic, so
        // compare permutations explicitly on ties
        if val > best_val + 1e-15 || ((val - best_val).abs() <= 1e-15 && p < &best[..]) {
            best_val = val;
            best = p.to_vec();
        }
    });
    best
}

fn permute_visit(items: &mut [usize], k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute_visit(items, k + 1, f);
        items.swap(k, i);
    }
}

/// Maximum-sum linear assignment via the O(n^3) shortest-augmenting-path
/// Hungarian algorithm on the negated cost matrix. Returns, per row, the
/// chosen column, i.e. the same orientation as [`exhaustive_assignment`].
pub fn hungarian_max(score: &[f64], m: usize) -> Vec<usize> {
    // standard potentials formulation; cost = -score so minimizing cost
    // maximizes the score sum
    let n = m;
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j (1-based)
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = -score[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    perm
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub per_class_accuracy: Vec<f64>,
    pub mean_per_class_accuracy: f64,
    pub overall_accuracy: f64,
}

/// Summary metrics over an already column-assigned matrix. Mean per-class
/// accuracy averages only classes with nonzero support.
pub fn metrics(cm_assigned: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let m = cm_assigned.num_classes;
    let total = cm_assigned.total();
    if total == 0 {
        return Err(EvalError::NoLabeledPixels);
    }
    let norm = cm_assigned.row_normalized();
    let per_class: Vec<f64> = (0..m).map(|g| norm[g * m + g]).collect();
    let mut mean = 0.0;
    let mut supported = 0usize;
    for g in 0..m {
        let row: u64 = (0..m).map(|p| cm_assigned.at(g, p)).sum();
        if row > 0 {
            mean += per_class[g];
            supported += 1;
        }
    }
    let trace: u64 = (0..m).map(|g| cm_assigned.at(g, g)).sum();
    Ok(Metrics {
        per_class_accuracy: per_class,
        mean_per_class_accuracy: mean / supported.max(1) as f64,
        overall_accuracy: trace as f64 / total as f64,
    })
}

/// Writes a human-readable table (`<stem>.txt`) and a flat matrix file
/// (`<stem>.mat`: header line with M, then M*M row-normalized proportions
/// row-major, 3 decimals). Byte output is deterministic for fixed input.
pub fn render_report(
    cm_assigned: &ConfusionMatrix,
    metrics: &Metrics,
    stem: &Path,
) -> Result<(), EvalError> {
    let m = cm_assigned.num_classes;
    let norm = cm_assigned.row_normalized();
    let mut txt = String::new();
    let _ = writeln!(txt, "confusion matrix (row-normalized, columns assigned)");
    let _ = write!(txt, "{:>12}", "");
    for p in 0..m {
        let _ = write!(txt, " {:>8}", format!("pred{p}"));
    }
    txt.push('\n');
    for g in 0..m {
        let row: u64 = (0..m).map(|p| cm_assigned.at(g, p)).sum();
        let _ = write!(txt, "{:>12}", cm_assigned.class_names[g]);
        for p in 0..m {
            let _ = write!(txt, " {:>8.3}", norm[g * m + p]);
        }
        if row == 0 {
            txt.push_str("  *");
        }
        txt.push('\n');
    }
    let _ = writeln!(txt, "* class absent from the evaluated pixels");
    let _ = writeln!(txt);
    for g in 0..m {
        let _ = writeln!(
            txt,
            "accuracy {:>12}: {:.3}",
            cm_assigned.class_names[g], metrics.per_class_accuracy[g]
        );
    }
    let _ = writeln!(
        txt,
        "mean per-class accuracy: {:.3}",
        metrics.mean_per_class_accuracy
    );
    let _ = writeln!(txt, "overall accuracy: {:.3}", metrics.overall_accuracy);
    let txt_path = stem.with_extension("txt");
    fs::write(&txt_path, txt).map_err(|source| EvalError::Io {
        path: txt_path.clone(),
        source,
    })?;

    let mut mat = format!("{m}\n");
    for g in 0..m {
        let row: Vec<String> = (0..m).map(|p| format!("{:.3}", norm[g * m + p])).collect();
        let _ = writeln!(mat, "{}", row.join(" "));
    }
    let mat_path = stem.with_extension("mat");
    fs::write(&mat_path, mat).map_err(|source| EvalError::Io {
        path: mat_path.clone(),
        source,
    })
}

/// Parses the flat matrix file written by [`render_report`].
pub fn parse_matrix_file(path: &Path) -> Result<Vec<f64>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut nums = text.split_whitespace();
    let m: usize = nums.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    Ok(nums.filter_map(|s| s.parse().ok()).take(m * m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn confusion_perfect_prediction_is_diagonal() {
        let pred = vec![0u8, 1, 2, 1, 0];
        let cm = confusion(&[&pred], &[&pred], 3).unwrap();
        assert_eq!(cm.at(0, 0), 2);
        assert_eq!(cm.at(1, 1), 2);
        assert_eq!(cm.at(2, 2), 1);
        assert_eq!(cm.total(), 5);
        for g in 0..3 {
            for p in 0..3 {
                if g != p {
                    assert_eq!(cm.at(g, p), 0);
                }
            }
        }
    }

    #[test]
    fn confusion_all_unlabeled_is_zero() {
        let pred = vec![0u8, 1, 2];
        let truth = vec![UNLABELED; 3];
        let cm = confusion(&[&pred], &[&truth], 3).unwrap();
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn confusion_hand_tally() {
        let pred = vec![0u8, 1, 1, 0];
        let truth = vec![0u8, 0, 1, UNLABELED];
        let cm = confusion(&[&pred], &[&truth], 2).unwrap();
        assert_eq!(cm.at(0, 0), 1);
        assert_eq!(cm.at(0, 1), 1);
        assert_eq!(cm.at(1, 1), 1);
        assert_eq!(cm.at(1, 0), 0);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn confusion_rejects_out_of_range() {
        let pred = vec![5u8];
        let truth = vec![0u8];
        assert!(confusion(&[&pred], &[&truth], 3).is_err());
    }

    #[test]
    fn assignment_diagonal_is_identity() {
        let mut cm = ConfusionMatrix::zeros(4);
        for i in 0..4 {
            cm.counts[i * 4 + i] = 10;
        }
        let (perm, _) = best_assignment(&cm).unwrap();
        assert_eq!(perm, vec![0, 1, 2, 3]);
    }

    #[test]
    fn assignment_antidiagonal_is_reversal() {
        let mut cm = ConfusionMatrix::zeros(4);
        for i in 0..4 {
            cm.counts[i * 4 + (3 - i)] = 10;
        }
        let (perm, fixed) = best_assignment(&cm).unwrap();
        assert_eq!(perm, vec![3, 2, 1, 0]);
        for i in 0..4 {
            assert_eq!(fixed.at(i, i), 10);
        }
    }

    #[test]
    fn exhaustive_matches_hungarian_on_random_7x7() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..25 {
            let score: Vec<f64> = (0..49).map(|_| rng.gen::<f64>()).collect();
            let a = exhaustive_assignment(&score, 7);
            let b = hungarian_max(&score, 7);
            let va: f64 = (0..7).map(|g| score[g * 7 + a[g]]).sum();
            let vb: f64 = (0..7).map(|g| score[g * 7 + b[g]]).sum();
            assert!((va - vb).abs() < 1e-9, "exhaustive {va} vs hungarian {vb}");
        }
    }

    #[test]
    fn assignment_absorbs_prediction_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pred: Vec<u8> = (0..500).map(|_| rng.gen_range(0..5u8)).collect();
        let truth: Vec<u8> = pred
            .iter()
            .map(|&p| if rng.gen::<f64>() < 0.8 { p } else { rng.gen_range(0..5u8) })
            .collect();
        let relabel = [3u8, 0, 4, 1, 2];
        let pred2: Vec<u8> = pred.iter().map(|&p| relabel[p as usize]).collect();
        let m1 = {
            let cm = confusion(&[&pred], &[&truth], 5).unwrap();
            let (_, fixed) = best_assignment(&cm).unwrap();
            metrics(&fixed).unwrap()
        };
        let m2 = {
            let cm = confusion(&[&pred2], &[&truth], 5).unwrap();
            let (_, fixed) = best_assignment(&cm).unwrap();
            metrics(&fixed).unwrap()
        };
        assert!((m1.overall_accuracy - m2.overall_accuracy).abs() < 1e-12);
        assert!((m1.mean_per_class_accuracy - m2.mean_per_class_accuracy).abs() < 1e-12);
    }

    #[test]
    fn metrics_identity_proportions() {
        let mut cm = ConfusionMatrix::zeros(3);
        for i in 0..3 {
            cm.counts[i * 3 + i] = 7;
        }
        let m = metrics(&cm).unwrap();
        assert!(m.per_class_accuracy.iter().all(|&a| (a - 1.0).abs() < 1e-12));
        assert!((m.mean_per_class_accuracy - 1.0).abs() < 1e-12);
        assert!((m.overall_accuracy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_uniform_proportions() {
        let m = 4;
        let mut cm = ConfusionMatrix::zeros(m);
        for v in cm.counts.iter_mut() {
            *v = 5;
        }
        let out = metrics(&cm).unwrap();
        assert!((out.mean_per_class_accuracy - 1.0 / m as f64).abs() < 1e-12);
    }

    #[test]
    fn metrics_hand_2x2_oracle() {
        let mut cm = ConfusionMatrix::zeros(2);
        cm.counts = vec![3, 1, 2, 4];
        let m = metrics(&cm).unwrap();
        assert!((m.overall_accuracy - 0.7).abs() < 1e-12);
        assert!((m.per_class_accuracy[0] - 0.75).abs() < 1e-12);
        assert!((m.per_class_accuracy[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_skip_absent_classes() {
        let mut cm = ConfusionMatrix::zeros(3);
        cm.counts = vec![4, 0, 0, 0, 0, 0, 0, 0, 0];
        let m = metrics(&cm).unwrap();
        assert!((m.mean_per_class_accuracy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_joint_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut cm = ConfusionMatrix::zeros(4);
        for v in cm.counts.iter_mut() {
            *v = rng.gen_range(0..50);
        }
        let perm = [2usize, 0, 3, 1];
        let mut cm2 = ConfusionMatrix::zeros(4);
        for g in 0..4 {
            for p in 0..4 {
                cm2.counts[perm[g] * 4 + perm[p]] = cm.at(g, p);
            }
        }
        let a = metrics(&cm).unwrap();
        let b = metrics(&cm2).unwrap();
        assert!((a.overall_accuracy - b.overall_accuracy).abs() < 1e-12);
        assert!((a.mean_per_class_accuracy - b.mean_per_class_accuracy).abs() < 1e-12);
    }

    #[test]
    fn report_round_trips_at_print_precision() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cm = ConfusionMatrix::zeros(3);
        for v in cm.counts.iter_mut() {
            *v = rng.gen_range(1..100);
        }
        let m = metrics(&cm).unwrap();
        let stem = dir.path().join("report");
        render_report(&cm, &m, &stem).unwrap();
        let parsed = parse_matrix_file(&stem.with_extension("mat")).unwrap();
        let norm = cm.row_normalized();
        assert_eq!(parsed.len(), 9);
        for (a, b) in parsed.iter().zip(&norm) {
            assert!((a - b).abs() <= 5e-4 + 1e-9);
        }
        // determinism
        let stem2 = dir.path().join("report2");
        render_report(&cm, &m, &stem2).unwrap();
        assert_eq!(
            fs::read(stem.with_extension("txt")).unwrap(),
            fs::read(stem2.with_extension("txt")).unwrap()
        );
    }

    #[test]
    fn report_marks_empty_class_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cm = ConfusionMatrix::zeros(2);
        cm.counts = vec![5, 1, 0, 0];
        let m = metrics(&cm).unwrap();
        let stem = dir.path().join("r");
        render_report(&cm, &m, &stem).unwrap();
        let txt = fs::read_to_string(stem.with_extension("txt")).unwrap();
        assert!(txt.lines().any(|l| l.contains("class1") && l.ends_with('*')));
    }

    #[test]
    fn metrics_zero_pixels_is_error() {
        let cm = ConfusionMatrix::zeros(3);
        assert!(matches!(metrics(&cm), Err(EvalError::NoLabeledPixels)));
    }
}
