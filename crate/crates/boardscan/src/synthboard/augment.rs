//! Training-time corruption of clean patches.
//!
//! Three corruption families mimic defect appearance: filled rectangles,
//! random pixel drops, and a locally shifted block. Each applies
//! independently with its configured probability (at least one forced by
//! default); global flips are label-preserving and applied to input and
//! target alike.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{GateMask, Image};

/// Probabilities and the forcing rule; exposed so experiments can retune
/// the corruption mix without code changes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub p_rects: f64,
    pub p_drops: f64,
    pub p_shift: f64,
    pub p_flip: f64,
    /// When no family fires, draw one uniformly so every training sample
    /// carries a restoration signal.
    pub force_at_least_one: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_rects: 0.5,
            p_drops: 0.5,
            p_shift: 0.5,
            p_flip: 0.5,
            force_at_least_one: true,
        }
    }
}

/// Corrupted input, clean target, and the binary mask of corrupted pixels.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub input: Image,
    pub target: Image,
    pub pseudo_mask: GateMask,
}

/// Geometry of the applied corruptions, for rasterization oracles.
#[derive(Debug, Clone, Default)]
pub struct CorruptionLog {
    /// (row, col, h, w) of each filled rectangle.
    pub rects: Vec<(usize, usize, usize, usize)>,
    /// Flat pixel indices zeroed by the drop pass.
    pub drops: Vec<usize>,
    /// (row, col, side, dr, dc) of the shifted block, if applied.
    pub block: Option<(usize, usize, usize, i32, i32)>,
    pub flip_h: bool,
    pub flip_v: bool,
}

/// Corrupt a clean patch. Every decision comes from `seed`, so the output
/// is reproducible sample by sample.
pub fn augment_patch(clean: &Image, seed: u64, cfg: &AugmentConfig) -> (AugmentedPair, CorruptionLog) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2545_f491_4f6c_dd1d);
    let (h, w, ch) = (clean.height, clean.width, clean.channels);
    let mut input = clean.clone();
    let mut mask = GateMask::zeros(h, w);
    let mut log = CorruptionLog::default();

    let mut apply_rects = rng.gen_bool(cfg.p_rects);
    let mut apply_drops = rng.gen_bool(cfg.p_drops);
    let mut apply_shift = rng.gen_bool(cfg.p_shift);
    if cfg.force_at_least_one && !(apply_rects || apply_drops || apply_shift) {
        match rng.gen_range(0..3) {
            0 => apply_rects = true,
            1 => apply_drops = true,
            _ => apply_shift = true,
        }
    }

    if apply_rects {
        let n = rng.gen_range(1..=4);
        for _ in 0..n {
            let rh = side_in_range(&mut rng, h, 0.08, 0.25);
            let rw = side_in_range(&mut rng, w, 0.08, 0.25);
            let r0 = rng.gen_range(0..=h - rh);
            let c0 = rng.gen_range(0..=w - rw);
            let mean_fill = rng.gen_bool(0.5);
            let mean = channel_means(clean);
            for r in r0..r0 + rh {
                for c in c0..c0 + rw {
                    for k in 0..ch {
                        let v = if mean_fill {
                            mean[k]
                        } else {
                            rng.gen_range(0.0..1.0)
                        };
                        input.set(r, c, k, v);
                    }
                    mask.set(r, c, 1.0);
                }
            }
            log.rects.push((r0, c0, rh, rw));
        }
    }

    if apply_drops {
        let p = rng.gen_range(0.01..0.05);
        for px in 0..h * w {
            if rng.gen_bool(p) {
                for k in 0..ch {
                    input.data[px * ch + k] = 0.0;
                }
                mask.data[px] = 1.0;
                log.drops.push(px);
            }
        }
    }

    if apply_shift {
        let side = side_in_range(&mut rng, h.min(w), 0.12, 0.25);
        let amount = rng.gen_range(1..=4i32);
        let (dr, dc) = match rng.gen_range(0..4) {
            0 => (amount, 0),
            1 => (-amount, 0),
            2 => (0, amount),
            _ => (0, -amount),
        };
        let max_r = h as i32 - side as i32 - dr.abs();
        let max_c = w as i32 - side as i32 - dc.abs();
        let r0 = rng.gen_range(0..=max_r.max(0)) + dr.min(0).abs();
        let c0 = rng.gen_range(0..=max_c.max(0)) + dc.min(0).abs();
        let (r0, c0) = (r0 as usize, c0 as usize);
        // copy the source block to its shifted destination; both regions
        // are marked corrupted
        let src: Vec<f32> = (0..side * side * ch)
            .map(|i| {
                let (r, rem) = (i / (side * ch), i % (side * ch));
                let (c, k) = (rem / ch, rem % ch);
                clean.get(r0 + r, c0 + c, k)
            })
            .collect();
        for r in 0..side {
            for c in 0..side {
                let tr = (r0 + r) as i32 + dr;
                let tc = (c0 + c) as i32 + dc;
                for k in 0..ch {
                    input.set(tr as usize, tc as usize, k, src[(r * side + c) * ch + k]);
                }
                mask.set(tr as usize, tc as usize, 1.0);
                mask.set(r0 + r, c0 + c, 1.0);
            }
        }
        log.block = Some((r0, c0, side, dr, dc));
    }

    let mut target = clean.clone();
    // label-preserving global flips: input, target, and mask together
    if rng.gen_bool(cfg.p_flip) {
        log.flip_h = true;
        flip_horizontal(&mut input);
        flip_horizontal(&mut target);
        flip_mask_horizontal(&mut mask);
    }
    if rng.gen_bool(cfg.p_flip) {
        log.flip_v = true;
        flip_vertical(&mut input);
        flip_vertical(&mut target);
        flip_mask_vertical(&mut mask);
    }

    (
        AugmentedPair {
            input,
            target,
            pseudo_mask: mask,
        },
        log,
    )
}

fn side_in_range(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> usize {
    let lo_px = ((dim as f64 * lo).round() as usize).max(2);
    let hi_px = ((dim as f64 * hi).round() as usize).max(lo_px + 1);
    rng.gen_range(lo_px..=hi_px.min(dim))
}

fn channel_means(img: &Image) -> Vec<f32> {
    let mut means = vec![0.0f64; img.channels];
    for px in 0..img.height * img.width {
        for k in 0..img.channels {
            means[k] += img.data[px * img.channels + k] as f64;
        }
    }
    let n = (img.height * img.width) as f64;
    means.iter().map(|&m| (m / n) as f32).collect()
}

fn flip_horizontal(img: &mut Image) {
    let (h, w, ch) = (img.height, img.width, img.channels);
    for r in 0..h {
        for c in 0..w / 2 {
            for k in 0..ch {
                let a = img.idx(r, c, k);
                let b = img.idx(r, w - 1 - c, k);
                img.data.swap(a, b);
            }
        }
    }
}

fn flip_vertical(img: &mut Image) {
    let (h, w, ch) = (img.height, img.width, img.channels);
    for r in 0..h / 2 {
        for c in 0..w {
            for k in 0..ch {
                let a = img.idx(r, c, k);
                let b = img.idx(h - 1 - r, c, k);
                img.data.swap(a, b);
            }
        }
    }
}

fn flip_mask_horizontal(mask: &mut GateMask) {
    let (h, w) = (mask.height, mask.width);
    for r in 0..h {
        for c in 0..w / 2 {
            mask.data.swap(r * w + c, r * w + (w - 1 - c));
        }
    }
}

fn flip_mask_vertical(mask: &mut GateMask) {
    let (h, w) = (mask.height, mask.width);
    for r in 0..h / 2 {
        for c in 0..w {
            mask.data.swap(r * w + c, (h - 1 - r) * w + c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn clean_patch(side: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(
            side,
            side,
            3,
            (0..side * side * 3).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let clean = clean_patch(64, 1);
        let (a, _) = augment_patch(&clean, 77, &AugmentConfig::default());
        let (b, _) = augment_patch(&clean, 77, &AugmentConfig::default());
        assert_eq!(a.input.data, b.input.data);
        assert_eq!(a.target.data, b.target.data);
        assert_eq!(a.pseudo_mask.data, b.pseudo_mask.data);
        let (c, _) = augment_patch(&clean, 78, &AugmentConfig::default());
        assert_ne!(a.input.data, c.input.data);
    }

    #[test]
    fn disabled_hook_yields_identity() {
        let clean = clean_patch(32, 2);
        let cfg = AugmentConfig {
            p_rects: 0.0,
            p_drops: 0.0,
            p_shift: 0.0,
            p_flip: 0.0,
            force_at_least_one: false,
        };
        let (pair, log) = augment_patch(&clean, 5, &cfg);
        assert_eq!(pair.input.data, clean.data);
        assert_eq!(pair.target.data, clean.data);
        assert!(pair.pseudo_mask.data.iter().all(|&v| v == 0.0));
        assert!(log.rects.is_empty() && log.drops.is_empty() && log.block.is_none());
    }

    #[test]
    fn force_guarantees_a_corruption() {
        let clean = clean_patch(32, 3);
        let cfg = AugmentConfig {
            p_rects: 0.0,
            p_drops: 0.0,
            p_shift: 0.0,
            p_flip: 0.0,
            force_at_least_one: true,
        };
        for seed in 0..20 {
            let (pair, _) = augment_patch(&clean, seed, &cfg);
            assert!(pair.pseudo_mask.area() > 0, "seed {seed}");
        }
    }

    /// Rasterization oracle: the mask must equal the union of the logged
    /// corruption geometry (flips disabled so coordinates line up).
    #[test]
    fn mask_equals_logged_geometry() {
        let clean = clean_patch(64, 4);
        let cfg = AugmentConfig {
            p_flip: 0.0,
            ..Default::default()
        };
        for seed in 0..30 {
            let (pair, log) = augment_patch(&clean, seed, &cfg);
            let mut expect = GateMask::zeros(64, 64);
            for &(r0, c0, h, w) in &log.rects {
                for r in r0..r0 + h {
                    for c in c0..c0 + w {
                        expect.set(r, c, 1.0);
                    }
                }
            }
            for &px in &log.drops {
                expect.data[px] = 1.0;
            }
            if let Some((r0, c0, side, dr, dc)) = log.block {
                for r in 0..side {
                    for c in 0..side {
                        expect.set(r0 + r, c0 + c, 1.0);
                        expect.set(
                            (r0 as i32 + r as i32 + dr) as usize,
                            (c0 as i32 + c as i32 + dc) as usize,
                            1.0,
                        );
                    }
                }
            }
            assert_eq!(pair.pseudo_mask.data, expect.data, "seed {seed}");
            assert_eq!(pair.pseudo_mask.area(), expect.area());
        }
    }

    /// Core supervision invariant: any pixel where input differs from
    /// target lies inside the pseudo mask (flips on; they move input and
    /// target together).
    #[test]
    fn corrupted_pixels_lie_inside_mask() {
        let clean = clean_patch(48, 5);
        for seed in 0..40 {
            let (pair, _) = augment_patch(&clean, seed, &AugmentConfig::default());
            for px in 0..48 * 48 {
                let differs =
                    (0..3).any(|k| pair.input.data[px * 3 + k] != pair.target.data[px * 3 + k]);
                if differs {
                    assert_eq!(pair.pseudo_mask.data[px], 1.0, "seed {seed} pixel {px}");
                }
            }
        }
    }

    #[test]
    fn flips_preserve_labels() {
        let clean = clean_patch(32, 6);
        let cfg = AugmentConfig {
            p_rects: 0.0,
            p_drops: 0.0,
            p_shift: 0.0,
            p_flip: 1.0,
            force_at_least_one: false,
        };
        let (pair, log) = augment_patch(&clean, 9, &cfg);
        assert!(log.flip_h && log.flip_v);
        // input equals target (no corruption), both flipped
        assert_eq!(pair.input.data, pair.target.data);
        assert_ne!(pair.input.data, clean.data);
        assert_eq!(pair.input.get(0, 0, 0), clean.get(31, 31, 0));
        assert!(pair.pseudo_mask.data.iter().all(|&v| v == 0.0));
    }
}
