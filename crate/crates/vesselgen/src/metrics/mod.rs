//! Structural realism metrics over masks (components, branch points, loops,
//! crossings) and pixel-wise classification metrics (accuracy, sensitivity,
//! specificity, AUC).

pub mod graph;
pub mod skeleton;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{AvMask, Bitmap};

pub use graph::{build_vessel_graph, VesselGraph};
pub use skeleton::{count_components_8, count_holes_4, skeletonize};

/// 8-neighborhood adjacency on the thinned skeleton.
pub const DEFAULT_WINDOW_RADIUS: usize = 1;

/// A mask with under 0.5% foreground counts as empty; far below the
/// synthetic data's 1-20% band, so the flag is unambiguous.
pub const DEFAULT_EMPTY_THRESHOLD: f64 = 0.005;

/// Per-channel structural counts, computed on the skeleton graph so they do
/// not depend on vessel width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub component_count: usize,
    /// Skeleton-graph vertices of degree >= 3.
    pub branch_point_count: usize,
    /// Skeleton-graph vertices of degree >= 4.
    pub trifurcation_count: usize,
    /// Independent cycles: |E| - |V| + components.
    pub loop_count: usize,
    /// Fraction of raw (unthinned) pixels set in this channel.
    pub foreground_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructReport {
    pub artery: ChannelReport,
    pub vein: ChannelReport,
    /// Raw pixels set in both channels.
    pub crossing_pixel_count: usize,
    /// True when the union foreground fraction falls below the threshold.
    pub empty_flag: bool,
}

fn channel_report(channel: &Bitmap, window_radius: usize) -> Result<ChannelReport> {
    let skeleton = skeletonize(channel);
    let graph = build_vessel_graph(&skeleton, window_radius)?;
    Ok(ChannelReport {
        component_count: graph.component_count(),
        branch_point_count: graph.branch_point_count(),
        trifurcation_count: graph.trifurcation_count(),
        loop_count: graph.cycle_rank(),
        foreground_fraction: channel.foreground_fraction(),
    })
}

/// Full structural report for one mask.
pub fn struct_report(
    mask: &AvMask,
    window_radius: usize,
    empty_threshold: f64,
) -> Result<StructReport> {
    Ok(StructReport {
        artery: channel_report(&mask.artery, window_radius)?,
        vein: channel_report(&mask.vein, window_radius)?,
        crossing_pixel_count: mask.crossing_pixel_count(),
        empty_flag: mask.combined_foreground_fraction() < empty_threshold,
    })
}

/// Pixel-wise classification rates. A rate whose denominator is zero is
/// reported as absent rather than forced to a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
}

/// Confusion-matrix rates of a binary prediction against ground truth.
pub fn pixel_metrics(pred: &Bitmap, gt: &Bitmap) -> Result<PixelMetrics> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fal_n) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fal_n += 1,
        }
    }
    let rate = |num: u64, den: u64| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    Ok(PixelMetrics {
        accuracy: rate(tp + tn, tp + tn + fp + fal_n),
        sensitivity: rate(tp, tp + fal_n),
        specificity: rate(tn, tn + fp),
        auc: None,
    })
}

/// Rank-based AUC with tie correction: the probability that a positive
/// scores above a uniformly chosen negative, counting ties as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidParameter(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));

    // average ranks across tie groups (ranks are 1-based)
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fraction of masks whose union foreground fraction falls below
/// `threshold`.
pub fn empty_sample_rate(masks: &[AvMask], threshold: f64) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::InvalidParameter(
            "empty_sample_rate needs at least one mask".into(),
        ));
    }
    let empty = masks
        .iter()
        .filter(|m| m.combined_foreground_fraction() < threshold)
        .count();
    Ok(empty as f64 / masks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn from_rows(rows: &[&str]) -> Bitmap {
        let h = rows.len();
        let w = rows[0].len();
        let mut b = Bitmap::new(w, h);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                if ch == '#' {
                    b.set(x, y, true);
                }
            }
        }
        b
    }

    fn mask_of(artery: Bitmap) -> AvMask {
        let vein = Bitmap::new(artery.width(), artery.height());
        AvMask::new(artery, vein).unwrap()
    }

    #[test]
    fn empty_mask_report() {
        let mask = AvMask::empty(8, 8);
        let r = struct_report(&mask, 1, DEFAULT_EMPTY_THRESHOLD).unwrap();
        assert_eq!(r.artery.component_count, 0);
        assert_eq!(r.artery.branch_point_count, 0);
        assert_eq!(r.artery.loop_count, 0);
        assert_eq!(r.crossing_pixel_count, 0);
        assert!(r.empty_flag);
    }

    #[test]
    fn y_junction_counts() {
        // three arms meeting at one pixel: 1 component, 1 branch point,
        // no loops
        let y = from_rows(&[
            "#...#......",
            ".#.#.......",
            "..#........",
            "..#........",
            "..#........",
            "..#........",
        ]);
        let r = struct_report(&mask_of(y), 1, DEFAULT_EMPTY_THRESHOLD).unwrap();
        assert_eq!(r.artery.component_count, 1);
        assert_eq!(r.artery.branch_point_count, 1);
        assert_eq!(r.artery.trifurcation_count, 0);
        assert_eq!(r.artery.loop_count, 0);
        assert!(!r.empty_flag);
    }

    #[test]
    fn ring_has_one_loop() {
        let ring = from_rows(&[
            ".###.",
            "#...#",
            "#...#",
            "#...#",
            ".###.",
        ]);
        let r = struct_report(&mask_of(ring), 1, DEFAULT_EMPTY_THRESHOLD).unwrap();
        assert_eq!(r.artery.component_count, 1);
        assert_eq!(r.artery.loop_count, 1);
    }

    #[test]
    fn disjoint_strokes_count_components() {
        let two = from_rows(&[
            "####....",
            "........",
            "....####",
        ]);
        let r = struct_report(&mask_of(two), 1, DEFAULT_EMPTY_THRESHOLD).unwrap();
        assert_eq!(r.artery.component_count, 2);
        assert_eq!(r.artery.loop_count, 0);
    }

    #[test]
    fn crossing_pair_counted_across_channels() {
        let mut artery = Bitmap::new(7, 7);
        let mut vein = Bitmap::new(7, 7);
        for i in 0..7 {
            artery.set(i, 3, true);
            vein.set(3, i, true);
        }
        let mask = AvMask::new(artery, vein).unwrap();
        let r = struct_report(&mask, 1, DEFAULT_EMPTY_THRESHOLD).unwrap();
        assert_eq!(r.crossing_pixel_count, 1);
        assert_eq!(r.artery.component_count, 1);
        assert_eq!(r.vein.component_count, 1);
    }

    #[test]
    fn report_translation_invariant() {
        let shape = from_rows(&[
            ".#...",
            ".#.#.",
            ".##..",
            ".#...",
        ]);
        let mask = mask_of(shape.clone());
        let r1 = struct_report(&mask, 1, DEFAULT_EMPTY_THRESHOLD).unwrap();
        // shift by (3, 2) on a larger canvas
        let mut moved = Bitmap::new(10, 9);
        for y in 0..shape.height() {
            for x in 0..shape.width() {
                if shape.get(x, y) {
                    moved.set(x + 3, y + 2, true);
                }
            }
        }
        let r2 = struct_report(&mask_of(moved), 1, DEFAULT_EMPTY_THRESHOLD).unwrap();
        assert_eq!(r1.artery.component_count, r2.artery.component_count);
        assert_eq!(r1.artery.branch_point_count, r2.artery.branch_point_count);
        assert_eq!(r1.artery.loop_count, r2.artery.loop_count);
    }

    #[test]
    fn perfect_prediction_rates() {
        let gt = from_rows(&["##..", "..##"]);
        let m = pixel_metrics(&gt, &gt).unwrap();
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.sensitivity, Some(1.0));
        assert_eq!(m.specificity, Some(1.0));
        assert_eq!(m.auc, None);
    }

    #[test]
    fn all_negative_prediction_rates() {
        // gt has k=3 foreground of n=8: Se 0, Sp 1, Acc 5/8
        let gt = from_rows(&["###.", "...."]);
        let pred = Bitmap::new(4, 2);
        let m = pixel_metrics(&pred, &gt).unwrap();
        assert_eq!(m.sensitivity, Some(0.0));
        assert_eq!(m.specificity, Some(1.0));
        assert_eq!(m.accuracy, Some(5.0 / 8.0));
    }

    #[test]
    fn undefined_rate_is_absent() {
        let gt = Bitmap::new(4, 2);
        let pred = from_rows(&["#...", "...."]);
        let m = pixel_metrics(&pred, &gt).unwrap();
        assert_eq!(m.sensitivity, None);
        assert!(m.specificity.is_some());
    }

    #[test]
    fn auc_separable_and_ties() {
        let perfect = auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(perfect, 1.0);
        let all_tied = auc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
        assert_eq!(all_tied, 0.5);
        let inverted = auc(&[0.9, 0.8, 0.1, 0.2], &[false, false, true, true]).unwrap();
        assert_eq!(inverted, 0.0);
    }

    #[test]
    fn auc_single_class_rejected() {
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auc(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn auc_matches_brute_force() {
        use rand::RngExt;
        let mut rng = crate::rng::rng_from_seed(99);
        for _ in 0..50 {
            let n = rng.random_range(2..60);
            // coarse grid of scores forces plenty of ties
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let fast = auc(&scores, &labels).unwrap();
            let brute = brute_force_auc(&scores, &labels);
            assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
        }
    }

    pub(crate) fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        use rand::RngExt;
        let mut rng = crate::rng::rng_from_seed(7);
        let n = 40;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let base = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() - 7.0).collect();
        assert_eq!(base, auc(&squashed, &labels).unwrap());
    }

    #[test]
    fn empty_sample_rate_counts() {
        let empty = AvMask::empty(10, 10);
        let mut full = AvMask::empty(10, 10);
        for y in 0..10 {
            for x in 0..10 {
                full.artery.set(x, y, true);
            }
        }
        let masks = vec![
            empty.clone(),
            empty.clone(),
            empty.clone(),
            full.clone(),
            full.clone(),
            full.clone(),
            full.clone(),
            full.clone(),
            full.clone(),
            full,
        ];
        assert_eq!(empty_sample_rate(&masks, 0.005).unwrap(), 0.3);
        let all_empty = vec![empty.clone(), empty];
        assert_eq!(empty_sample_rate(&all_empty, 0.005).unwrap(), 1.0);
        assert!(empty_sample_rate(&[], 0.005).is_err());
    }
}
