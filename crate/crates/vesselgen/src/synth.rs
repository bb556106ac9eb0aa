//! Procedural generator of ground-truth-like artery/vein masks.
//!
//! Trees grow from points on a disc boundary (mimicking the optic disc) as
//! random walks with curvature noise: each step stamps a filled circle of
//! the current width, branches split stochastically with the width shrinking
//! per split, and growth stops at maximum depth, sub-pixel width, or the
//! image border. Artery and vein roots interleave around the disc so the
//! two channels cross each other, which the structural metrics rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{AvMask, Bitmap};
use crate::rng::{derive_rng, standard_normal, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselTreeConfig {
    pub width: usize,
    pub height: usize,
    pub trees_per_channel: usize,
    /// Disc center in normalized [0, 1] image coordinates.
    pub disc_center: (f64, f64),
    /// Disc radius as a fraction of the image diagonal.
    pub disc_radius: f64,
    /// Stroke width at the root, in pixels.
    pub root_width: f64,
    /// Width multiplier applied at each bifurcation, in (0, 1).
    pub width_decay: f64,
    /// Per-step probability of splitting into two branches.
    pub bifurcation_prob: f64,
    /// Angle between sibling branches, degrees, sampled uniformly.
    pub branch_angle_range: (f64, f64),
    /// Maximum number of bifurcations along any root-to-tip path.
    pub max_depth: usize,
    /// Walk step, in pixels.
    pub step_length: f64,
    pub seed: u64,
}

impl Default for VesselTreeConfig {
    fn default() -> Self {
        VesselTreeConfig {
            width: 32,
            height: 32,
            trees_per_channel: 2,
            disc_center: (0.5, 0.5),
            disc_radius: 0.08,
            root_width: 2.0,
            width_decay: 0.70,
            bifurcation_prob: 0.10,
            branch_angle_range: (30.0, 70.0),
            max_depth: 2,
            step_length: 1.0,
            seed: 0,
        }
    }
}

impl VesselTreeConfig {
    /// Profile matching the full-scale 256x256 output resolution.
    pub fn full_scale(seed: u64) -> Self {
        VesselTreeConfig {
            width: 256,
            height: 256,
            trees_per_channel: 4,
            disc_radius: 0.06,
            root_width: 6.0,
            width_decay: 0.72,
            bifurcation_prob: 0.05,
            max_depth: 4,
            step_length: 2.0,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(format!(
                "mask dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.width_decay > 0.0 && self.width_decay < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "width_decay must lie in (0, 1), got {}",
                self.width_decay
            )));
        }
        if !(0.0..=1.0).contains(&self.bifurcation_prob) {
            return Err(Error::InvalidParameter(format!(
                "bifurcation_prob must lie in [0, 1], got {}",
                self.bifurcation_prob
            )));
        }
        let (lo, hi) = self.branch_angle_range;
        if !(0.0 < lo && lo <= hi && hi < 90.0) {
            return Err(Error::InvalidParameter(format!(
                "branch_angle_range must satisfy 0 < lo <= hi < 90, got ({lo}, {hi})"
            )));
        }
        if !(self.step_length > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "step_length must be positive, got {}",
                self.step_length
            )));
        }
        if !(self.disc_radius >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "disc_radius must be non-negative, got {}",
                self.disc_radius
            )));
        }
        Ok(())
    }
}

/// Grow one mask from the config's seed. Channels are guaranteed loop-free:
/// random walks in a small canvas occasionally merge into tangles whose
/// skeleton graph carries cycles, and such draws are rejected and regrown
/// from a derived sub-seed.
pub fn generate_mask(cfg: &VesselTreeConfig) -> Result<AvMask> {
    cfg.validate()?;
    const GROW_ATTEMPTS: u64 = 64;
    for attempt in 0..GROW_ATTEMPTS {
        let mask = grow_mask(cfg, splitmix(cfg.seed.wrapping_add(attempt)));
        if channel_loop_free(&mask.artery) && channel_loop_free(&mask.vein) {
            return Ok(mask);
        }
    }
    Err(Error::InvalidParameter(format!(
        "every draw produced tangled strokes after {GROW_ATTEMPTS} attempts; \
         lower bifurcation_prob or max_depth for this canvas size"
    )))
}

fn channel_loop_free(channel: &Bitmap) -> bool {
    let skeleton = crate::metrics::skeletonize(channel);
    crate::metrics::build_vessel_graph(&skeleton, 1)
        .map(|g| g.cycle_rank() == 0)
        .unwrap_or(false)
}

fn grow_mask(cfg: &VesselTreeConfig, seed: u64) -> AvMask {
    let mut mask = AvMask::empty(cfg.width, cfg.height);
    let mut rng = derive_rng(seed, 0);
    let n = cfg.trees_per_channel;
    // artery roots at even slots, vein roots at odd: neighboring trees of
    // opposite channels fan outward and cross
    for tree in 0..n {
        let angle = root_angle(&mut rng, 2 * tree, 2 * n.max(1));
        grow_tree(&mut mask.artery, cfg, &mut rng, angle);
    }
    for tree in 0..n {
        let angle = root_angle(&mut rng, 2 * tree + 1, 2 * n.max(1));
        grow_tree(&mut mask.vein, cfg, &mut rng, angle);
    }
    mask
}

fn root_angle(rng: &mut Rng, slot: usize, slots: usize) -> f64 {
    let base = std::f64::consts::TAU * slot as f64 / slots as f64;
    let jitter = standard_normal(rng) * 0.35 * std::f64::consts::TAU / slots as f64;
    base + jitter
}

fn grow_tree(channel: &mut Bitmap, cfg: &VesselTreeConfig, rng: &mut Rng, angle: f64) {
    use rand::RngExt;
    let diag = ((cfg.width * cfg.width + cfg.height * cfg.height) as f64).sqrt();
    let cx = cfg.disc_center.0 * cfg.width as f64;
    let cy = cfg.disc_center.1 * cfg.height as f64;
    let r = cfg.disc_radius * diag;
    let start = (cx + r * angle.cos(), cy + r * angle.sin());
    // each tree sweeps off the radial direction by its own slant, so
    // neighboring trees of opposite channels arc across one another
    let slant = (0.3 + 0.5 * rng.random::<f64>())
        * if rng.random::<bool>() { 1.0 } else { -1.0 };
    grow_branch(channel, cfg, rng, start, angle + slant, cfg.root_width, 0);
}

// Hard cap on steps per branch; walks normally stop at the border or on
// width decay long before this.
fn step_cap(cfg: &VesselTreeConfig) -> usize {
    (4 * (cfg.width + cfg.height)).max(64)
}

fn grow_branch(
    channel: &mut Bitmap,
    cfg: &VesselTreeConfig,
    rng: &mut Rng,
    start: (f64, f64),
    heading: f64,
    width: f64,
    depth: usize,
) {
    use rand::RngExt;
    let (mut x, mut y) = start;
    let mut heading = heading;
    let curvature_std = 0.12;
    for _ in 0..step_cap(cfg) {
        if width < 1.0 {
            return;
        }
        heading += standard_normal(rng) * curvature_std;
        let nx = x + heading.cos() * cfg.step_length;
        let ny = y + heading.sin() * cfg.step_length;
        stamp_segment(channel, (x, y), (nx, ny), width / 2.0);
        (x, y) = (nx, ny);
        if x < 0.0 || y < 0.0 || x >= cfg.width as f64 || y >= cfg.height as f64 {
            return;
        }
        if depth < cfg.max_depth && rng.random::<f64>() < cfg.bifurcation_prob {
            let (lo, hi) = cfg.branch_angle_range;
            let split = (lo + (hi - lo) * rng.random::<f64>()).to_radians();
            let child_width = width * cfg.width_decay;
            grow_branch(channel, cfg, rng, (x, y), heading - split / 2.0, child_width, depth + 1);
            grow_branch(channel, cfg, rng, (x, y), heading + split / 2.0, child_width, depth + 1);
            return;
        }
    }
}

// Stamps spaced closely enough along the segment that consecutive discs
// always overlap, whatever the step length.
fn stamp_segment(channel: &mut Bitmap, from: (f64, f64), to: (f64, f64), radius: f64) {
    let dist = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    let stamps = (dist / 0.5).ceil().max(1.0) as usize;
    for i in 0..=stamps {
        let t = i as f64 / stamps as f64;
        stamp_disc(
            channel,
            from.0 + (to.0 - from.0) * t,
            from.1 + (to.1 - from.1) * t,
            radius,
        );
    }
}

fn stamp_disc(channel: &mut Bitmap, cx: f64, cy: f64, radius: f64) {
    let r = radius.max(0.5);
    let x0 = ((cx - r).floor() as isize).max(0);
    let x1 = ((cx + r).ceil() as isize).min(channel.width() as isize - 1);
    let y0 = ((cy - r).floor() as isize).max(0);
    let y1 = ((cy + r).ceil() as isize).min(channel.height() as isize - 1);
    let r_sq = r * r;
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            let dx = xx as f64 + 0.5 - cx;
            let dy = yy as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r_sq {
                channel.set(xx as usize, yy as usize, true);
            }
        }
    }
    // keep a stroke present even when the disc is thinner than a pixel
    let px = cx.floor().clamp(0.0, channel.width() as f64 - 1.0) as usize;
    let py = cy.floor().clamp(0.0, channel.height() as f64 - 1.0) as usize;
    channel.set(px, py, true);
}

/// Acceptance band for the union foreground fraction of generated masks.
pub const FOREGROUND_BAND: (f64, f64) = (0.01, 0.20);

const RESAMPLE_ATTEMPTS: u64 = 10;

/// Generate `n` masks with distinct derived seeds. A mask whose foreground
/// fraction falls outside [`FOREGROUND_BAND`] is resampled up to 10 times;
/// persistent failure reports a config error.
pub fn generate_dataset(n: usize, cfg: &VesselTreeConfig) -> Result<Vec<AvMask>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(generate_mask_in_band(cfg, i as u64)?);
    }
    Ok(out)
}

/// Per-mask seeds for dataset entry `index`, attempt 0.
pub fn dataset_entry_seed(base: u64, index: u64) -> u64 {
    splitmix(base ^ (index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn generate_mask_in_band(cfg: &VesselTreeConfig, index: u64) -> Result<AvMask> {
    let (lo, hi) = FOREGROUND_BAND;
    for attempt in 0..RESAMPLE_ATTEMPTS {
        let seed = splitmix(dataset_entry_seed(cfg.seed, index).wrapping_add(attempt));
        let mask = generate_mask(&VesselTreeConfig { seed, ..cfg.clone() })?;
        let frac = mask.combined_foreground_fraction();
        if (lo..=hi).contains(&frac) {
            return Ok(mask);
        }
    }
    Err(Error::InvalidParameter(format!(
        "mask {index} fell outside the {:.0}%-{:.0}% foreground band {RESAMPLE_ATTEMPTS} times; \
         adjust trees_per_channel, root_width, max_depth, or step_length",
        lo * 100.0,
        hi * 100.0
    )))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_trees_no_pixels() {
        let cfg = VesselTreeConfig { trees_per_channel: 0, ..Default::default() };
        let mask = generate_mask(&cfg).unwrap();
        assert_eq!(mask.combined_foreground_fraction(), 0.0);
    }

    #[test]
    fn same_seed_same_mask() {
        let cfg = VesselTreeConfig { seed: 77, ..Default::default() };
        assert_eq!(generate_mask(&cfg).unwrap(), generate_mask(&cfg).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_mask(&VesselTreeConfig { seed: 1, ..Default::default() }).unwrap();
        let b = generate_mask(&VesselTreeConfig { seed: 2, ..Default::default() }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_dataset_request() {
        assert!(generate_dataset(0, &VesselTreeConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn dataset_stays_in_band_with_healthy_mean() {
        let cfg = VesselTreeConfig { seed: 5, ..Default::default() };
        let masks = generate_dataset(100, &cfg).unwrap();
        assert_eq!(masks.len(), 100);
        let mut sum = 0.0;
        for m in &masks {
            let f = m.combined_foreground_fraction();
            assert!((FOREGROUND_BAND.0..=FOREGROUND_BAND.1).contains(&f), "{f}");
            sum += f;
        }
        let mean = sum / 100.0;
        assert!((0.02..=0.15).contains(&mean), "mean foreground {mean}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_decay = VesselTreeConfig { width_decay: 1.0, ..Default::default() };
        assert!(generate_mask(&bad_decay).is_err());
        let bad_prob = VesselTreeConfig { bifurcation_prob: 1.5, ..Default::default() };
        assert!(generate_mask(&bad_prob).is_err());
        let bad_angle =
            VesselTreeConfig { branch_angle_range: (0.0, 95.0), ..Default::default() };
        assert!(generate_mask(&bad_angle).is_err());
    }

    #[test]
    fn unbranched_trees_give_one_component_each() {
        // max_depth 0: each tree is a single stroke; rasterization can only
        // merge strokes, never split them
        let mut exact = 0usize;
        for seed in 0..20 {
            let cfg = VesselTreeConfig { max_depth: 0, seed, ..Default::default() };
            let mask = generate_mask(&cfg).unwrap();
            for channel in [&mask.artery, &mask.vein] {
                let skel = crate::metrics::skeletonize(channel);
                let g = crate::metrics::build_vessel_graph(&skel, 1).unwrap();
                let c = g.component_count();
                assert!(
                    (1..=cfg.trees_per_channel).contains(&c),
                    "seed {seed}: {c} components for {} trees",
                    cfg.trees_per_channel
                );
                if c == cfg.trees_per_channel {
                    exact += 1;
                }
            }
        }
        // disjoint strokes (the common case) keep one component per tree
        assert!(exact >= 20, "only {exact}/40 channels had disjoint strokes");
    }

    #[test]
    fn certain_bifurcation_yields_branch_points() {
        for seed in 0..10 {
            let cfg = VesselTreeConfig {
                bifurcation_prob: 1.0,
                max_depth: 1,
                step_length: 3.0,
                trees_per_channel: 1,
                seed,
                ..Default::default()
            };
            let mask = generate_mask(&cfg).unwrap();
            let r = crate::metrics::struct_report(&mask, 1, 0.005).unwrap();
            assert!(
                r.artery.branch_point_count >= 1,
                "seed {seed}: no branch point"
            );
        }
    }

    #[test]
    fn shallow_wide_trees_are_loop_free() {
        for seed in 0..20 {
            let cfg = VesselTreeConfig {
                max_depth: 2,
                branch_angle_range: (60.0, 80.0),
                seed,
                ..Default::default()
            };
            let mask = generate_mask(&cfg).unwrap();
            let r = crate::metrics::struct_report(&mask, 1, 0.005).unwrap();
            assert_eq!(r.artery.loop_count, 0, "seed {seed}");
            assert_eq!(r.vein.loop_count, 0, "seed {seed}");
        }
    }

    #[test]
    fn masks_cross_channels() {
        // interleaved roots should make arteries and veins overlap somewhere
        // in a healthy share of draws
        let mut crossings = 0usize;
        for seed in 0..50 {
            let cfg = VesselTreeConfig { seed, ..Default::default() };
            let mask = generate_mask(&cfg).unwrap();
            if mask.crossing_pixel_count() > 0 {
                crossings += 1;
            }
        }
        assert!(crossings >= 20, "only {crossings}/50 masks had any crossing");
    }
}
