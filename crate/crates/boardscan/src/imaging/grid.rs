//! Overlapping-patch geometry with half-stride sampling.
//!
//! Patches of side `patch_size` are sampled every `patch_size / 2` pixels,
//! so each interior pixel is covered by up to four patches. The grid also
//! enumerates the quarter-patch cells (stride × stride blocks) together with
//! the patches covering each cell; the merge stage works cell by cell.

use crate::error::{Error, Result};
use crate::imaging::Image;

/// One quarter-patch cell and the patches whose footprint contains it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellRef {
    pub cell_row: usize,
    pub cell_col: usize,
    /// Patch indices in ascending order; 4 for interior cells, 1–2 at
    /// borders and corners.
    pub covering_patches: Vec<usize>,
}

/// Geometry of the overlapping patch tiling over a (possibly padded) image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    /// Top-left corners, row-major over (row origin, col origin).
    pub origins: Vec<(usize, usize)>,
    pub cells: Vec<CellRef>,
    pub cell_rows: usize,
    pub cell_cols: usize,
    n_col_origins: usize,
}

impl PatchGrid {
    pub fn n_patches(&self) -> usize {
        self.origins.len()
    }

    #[inline]
    pub fn cell(&self, cell_row: usize, cell_col: usize) -> &CellRef {
        &self.cells[cell_row * self.cell_cols + cell_col]
    }

    /// Pixel rectangle of a cell as (row, col, h, w).
    pub fn cell_rect(&self, cell: &CellRef) -> (usize, usize, usize, usize) {
        (
            cell.cell_row * self.stride,
            cell.cell_col * self.stride,
            self.stride,
            self.stride,
        )
    }
}

fn round_up(value: usize, step: usize) -> usize {
    value.div_ceil(step) * step
}

/// Build the half-stride overlapping grid for an `height` × `width` image.
///
/// Dimensions are virtually padded up to the next stride multiple admitting
/// at least one full patch; callers pad pixels with [`pad_to_grid`].
pub fn build_grid(height: usize, width: usize, patch_size: usize) -> Result<PatchGrid> {
    if patch_size < 8 || patch_size % 2 != 0 {
        return Err(Error::Arg(format!(
            "patch_size must be even and >= 8, got {patch_size}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::Arg("zero image dimension".into()));
    }
    let stride = patch_size / 2;
    let padded_height = round_up(height.max(patch_size), stride);
    let padded_width = round_up(width.max(patch_size), stride);
    // Reflect padding can at most double an image minus one row/col.
    if padded_height > 2 * height - 1 || padded_width > 2 * width - 1 {
        return Err(Error::Arg(format!(
            "patch_size {patch_size} too large for {height}x{width} image"
        )));
    }

    let row_origins: Vec<usize> = (0..=padded_height - patch_size).step_by(stride).collect();
    let col_origins: Vec<usize> = (0..=padded_width - patch_size).step_by(stride).collect();
    let n_col_origins = col_origins.len();
    let origins: Vec<(usize, usize)> = row_origins
        .iter()
        .flat_map(|&r| col_origins.iter().map(move |&c| (r, c)))
        .collect();

    let cell_rows = padded_height / stride;
    let cell_cols = padded_width / stride;
    let mut cells = Vec::with_capacity(cell_rows * cell_cols);
    for cr in 0..cell_rows {
        let row_cover = covering_axis(cr, row_origins.len());
        for cc in 0..cell_cols {
            let col_cover = covering_axis(cc, n_col_origins);
            let mut covering_patches = Vec::with_capacity(4);
            for &ri in &row_cover {
                for &ci in &col_cover {
                    covering_patches.push(ri * n_col_origins + ci);
                }
            }
            covering_patches.sort_unstable();
            debug_assert!(!covering_patches.is_empty());
            cells.push(CellRef {
                cell_row: cr,
                cell_col: cc,
                covering_patches,
            });
        }
    }

    Ok(PatchGrid {
        patch_size,
        stride,
        padded_height,
        padded_width,
        origins,
        cells,
        cell_rows,
        cell_cols,
        n_col_origins,
    })
}

/// Patch origin indices along one axis whose footprint covers cell `c`.
///
/// A patch at origin index `i` spans cells `i` and `i + 1`, so cell `c` is
/// covered by origin indices `c - 1` and `c` clipped to the valid range.
fn covering_axis(c: usize, n_origins: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2);
    if c >= 1 && c - 1 < n_origins {
        out.push(c - 1);
    }
    if c < n_origins {
        out.push(c);
    }
    out
}

/// Reflect-pad an image to the grid's padded dimensions.
pub fn pad_to_grid(img: &Image, grid: &PatchGrid) -> Result<Image> {
    img.reflect_pad(grid.padded_height, grid.padded_width)
}

/// Copy patch `k` out of an image already padded to grid dimensions.
pub fn extract_patch(img: &Image, grid: &PatchGrid, k: usize) -> Result<Image> {
    if k >= grid.origins.len() {
        return Err(Error::Arg(format!(
            "patch index {k} out of range 0..{}",
            grid.origins.len()
        )));
    }
    if img.height != grid.padded_height || img.width != grid.padded_width {
        return Err(Error::Shape(format!(
            "image {}x{} not padded to grid {}x{}",
            img.height, img.width, grid.padded_height, grid.padded_width
        )));
    }
    let (r0, c0) = grid.origins[k];
    let p = grid.patch_size;
    let mut out = Image::zeros(p, p, img.channels);
    for r in 0..p {
        let src = img.idx(r0 + r, c0, 0);
        let dst = out.idx(r, 0, 0);
        let n = p * img.channels;
        out.data[dst..dst + n].copy_from_slice(&img.data[src..src + n]);
    }
    Ok(out)
}
