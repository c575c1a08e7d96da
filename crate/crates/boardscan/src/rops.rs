//! Region-level optimized patch selection: merges overlapping blended
//! patches into one full-resolution reconstruction.
//!
//! Each quarter-patch cell is either averaged across its covering patches
//! (when every patch agrees with the input below a threshold) or copied
//! from the single patch showing the greatest reconstruction difference,
//! keeping the strongest anomaly cue intact instead of diluting it.

use crate::error::{Error, Result};
use crate::imaging::{CellRef, Image, PatchGrid};

/// Scalar reduction of per-pixel differences over a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellScore {
    /// Maximum per-pixel (channel-averaged) absolute difference. Default:
    /// mean aggregation would dilute few-pixel defects below threshold.
    #[default]
    MaxPixel,
    /// Mean per-pixel difference over the cell.
    MeanPixel,
}

impl CellScore {
    pub fn parse(s: &str) -> Result<CellScore> {
        match s {
            "max_pixel" => Ok(CellScore::MaxPixel),
            "mean_pixel" => Ok(CellScore::MeanPixel),
            other => Err(Error::Arg(format!(
                "cell_score must be max_pixel or mean_pixel, got {other}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CellScore::MaxPixel => "max_pixel",
            CellScore::MeanPixel => "mean_pixel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    /// Difference threshold gating average vs selection.
    pub t_diff: f64,
    pub cell_score: CellScore,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            t_diff: 0.1,
            cell_score: CellScore::MaxPixel,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_diff > 0.0 && self.t_diff < 1.0) {
            return Err(Error::Arg(format!(
                "t_diff must lie in (0, 1), got {}",
                self.t_diff
            )));
        }
        Ok(())
    }
}

/// Reconstruction difference of one patch over one cell: per-pixel absolute
/// difference averaged over channels, then reduced by `cfg.cell_score`.
pub fn cell_diff(
    input: &Image,
    patch: &Image,
    patch_origin: (usize, usize),
    cell: &CellRef,
    grid: &PatchGrid,
    cfg: &MergeConfig,
) -> Result<f64> {
    let (cr0, cc0, ch, cw) = grid.cell_rect(cell);
    let (pr0, pc0) = patch_origin;
    if cr0 < pr0
        || cc0 < pc0
        || cr0 + ch > pr0 + patch.height
        || cc0 + cw > pc0 + patch.width
    {
        return Err(Error::Arg(format!(
            "cell ({},{}) outside patch footprint at ({pr0},{pc0})",
            cell.cell_row, cell.cell_col
        )));
    }
    if input.channels != patch.channels {
        return Err(Error::Shape("cell_diff channel mismatch".into()));
    }
    let nch = input.channels as f64;
    let mut acc: f64 = 0.0;
    let mut max: f64 = 0.0;
    for r in 0..ch {
        for c in 0..cw {
            let mut px_diff = 0.0f64;
            for k in 0..input.channels {
                let a = input.get(cr0 + r, cc0 + c, k) as f64;
                let b = patch.get(cr0 + r - pr0, cc0 + c - pc0, k) as f64;
                px_diff += (a - b).abs();
            }
            px_diff /= nch;
            acc += px_diff;
            if px_diff > max {
                max = px_diff;
            }
        }
    }
    Ok(match cfg.cell_score {
        CellScore::MaxPixel => max,
        CellScore::MeanPixel => acc / (ch * cw) as f64,
    })
}

/// Merge blended patches into the full-resolution reconstruction.
///
/// Per cell: if the largest per-patch difference stays below `t_diff`, the
/// cell is the pixelwise average of all covering patches; otherwise it is
/// copied from the patch with the greatest difference (ties broken by the
/// lowest patch index). The output is on padded dimensions; the caller
/// crops back to the original size.
pub fn rops_merge(
    input: &Image,
    patches: &[Image],
    grid: &PatchGrid,
    cfg: &MergeConfig,
) -> Result<Image> {
    cfg.validate()?;
    if patches.len() != grid.n_patches() {
        return Err(Error::Arg(format!(
            "{} patches for a grid of {}",
            patches.len(),
            grid.n_patches()
        )));
    }
    if input.height != grid.padded_height || input.width != grid.padded_width {
        return Err(Error::Shape(format!(
            "input {}x{} not padded to grid {}x{}",
            input.height, input.width, grid.padded_height, grid.padded_width
        )));
    }
    for p in patches {
        if p.height != grid.patch_size || p.width != grid.patch_size || p.channels != input.channels
        {
            return Err(Error::Shape("patch dims do not match grid".into()));
        }
    }

    let mut out = Image::zeros(input.height, input.width, input.channels);
    let nch = input.channels;
    for cell in &grid.cells {
        let (cr0, cc0, ch, cw) = grid.cell_rect(cell);
        let covering = &cell.covering_patches;
        let mut best_k = covering[0];
        let mut best_diff = f64::NEG_INFINITY;
        for &k in covering {
            let d = cell_diff(input, &patches[k], grid.origins[k], cell, grid, cfg)?;
            if d > best_diff {
                best_diff = d;
                best_k = k;
            }
        }
        if best_diff < cfg.t_diff {
            // consensus: average the covering reconstructions
            let inv = 1.0 / covering.len() as f64;
            for r in 0..ch {
                for c in 0..cw {
                    for k_ch in 0..nch {
                        let mut sum = 0.0f64;
                        for &k in covering {
                            let (pr0, pc0) = grid.origins[k];
                            sum += patches[k].get(cr0 + r - pr0, cc0 + c - pc0, k_ch) as f64;
                        }
                        out.set(cr0 + r, cc0 + c, k_ch, (sum * inv) as f32);
                    }
                }
            }
        } else {
            // potential anomaly: keep the maximum-discrepancy patch
            let (pr0, pc0) = grid.origins[best_k];
            for r in 0..ch {
                for c in 0..cw {
                    for k_ch in 0..nch {
                        let v = patches[best_k].get(cr0 + r - pr0, cc0 + c - pc0, k_ch);
                        out.set(cr0 + r, cc0 + c, k_ch, v);
                    }
                }
            }
        }
    }
    Ok(out)
}
