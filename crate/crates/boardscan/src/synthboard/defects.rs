//! Defect injection with exact pixel ground truth.
//!
//! A defect is a layout edit followed by a re-render; the annotation mask
//! is the exact set of pixels whose value changed, so locality and mask
//! tightness hold by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{render_board, Board, Component, Layout, Overlay, BODY_PALETTE};
use crate::error::{Error, Result};
use crate::imaging::{GateMask, Image};

const SOLDER_COLOR: [f32; 3] = [0.8, 0.79, 0.72];
const FOD_PALETTE: [[f32; 3]; 2] = [
    [0.55, 0.13, 0.1],  // rust fleck
    [0.16, 0.22, 0.52], // plastic shred
];

/// The five modeled defect classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DefectKind {
    MissingComponent,
    SolderBridge,
    ForeignObject,
    ExtraComponent,
    Misalignment,
}

impl DefectKind {
    pub const ALL: [DefectKind; 5] = [
        DefectKind::MissingComponent,
        DefectKind::SolderBridge,
        DefectKind::ForeignObject,
        DefectKind::ExtraComponent,
        DefectKind::Misalignment,
    ];

    /// Relative frequency (percent) of each class in the modeled test
    /// distribution.
    pub fn weight(&self) -> f64 {
        match self {
            DefectKind::MissingComponent => 57.0,
            DefectKind::SolderBridge => 27.9,
            DefectKind::ForeignObject => 11.1,
            DefectKind::ExtraComponent => 3.0,
            DefectKind::Misalignment => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DefectKind::MissingComponent => "missing_component",
            DefectKind::SolderBridge => "solder_bridge",
            DefectKind::ForeignObject => "foreign_object",
            DefectKind::ExtraComponent => "extra_component",
            DefectKind::Misalignment => "misalignment",
        }
    }

    pub fn parse(s: &str) -> Result<DefectKind> {
        DefectKind::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| Error::Arg(format!("unknown defect kind {s}")))
    }
}

/// Draw a defect kind with the modeled class frequencies.
pub fn sample_defect_kind(rng: &mut impl Rng) -> DefectKind {
    let total: f64 = DefectKind::ALL.iter().map(|k| k.weight()).sum();
    let mut x = rng.gen_range(0.0..total);
    for kind in DefectKind::ALL {
        if x < kind.weight() {
            return kind;
        }
        x -= kind.weight();
    }
    DefectKind::Misalignment
}

#[derive(Debug, Clone)]
pub struct DefectAnnotation {
    pub kind: DefectKind,
    /// Binary mask, nonzero exactly on altered pixels.
    pub mask: GateMask,
    /// (row, col, height, width) bounding box of the mask.
    pub bbox: (usize, usize, usize, usize),
}

/// Inject one defect into a generated board.
///
/// Returns the defective image and its annotation. Pixels outside the
/// annotation mask are bitwise-identical to the clean board.
pub fn inject_defect(
    board: &Board,
    kind: DefectKind,
    seed: u64,
) -> Result<(Image, DefectAnnotation)> {
    let (image, annotation, _) = inject_defect_with_layout(board, kind, seed)?;
    Ok((image, annotation))
}

/// Like [`inject_defect`] but also returning the edited layout, so tests
/// can re-derive masks from geometry.
pub fn inject_defect_with_layout(
    board: &Board,
    kind: DefectKind,
    seed: u64,
) -> Result<(Image, DefectAnnotation, Layout)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995_9d1e_995bu64);
    let mut layout = board.layout.clone();
    match kind {
        DefectKind::MissingComponent => {
            if layout.components.is_empty() {
                return Err(Error::SiteNotFound("board has no components".into()));
            }
            let idx = rng.gen_range(0..layout.components.len());
            layout.components.remove(idx);
        }
        DefectKind::SolderBridge => {
            let candidates: Vec<(usize, usize)> = layout
                .pad_pairs
                .iter()
                .copied()
                .filter(|&(a, b)| {
                    let pa = &layout.pads[a];
                    let pb = &layout.pads[b];
                    let dr = (pa.row - pb.row) as f32;
                    let dc = (pa.col - pb.col) as f32;
                    (dr * dr + dc * dc).sqrt() <= 24.0
                })
                .collect();
            if candidates.is_empty() {
                return Err(Error::SiteNotFound("no adjacent pad pair".into()));
            }
            let (a, b) = candidates[rng.gen_range(0..candidates.len())];
            let pa = &layout.pads[a];
            let pb = &layout.pads[b];
            layout.overlays.push(Overlay::Bar {
                r0: pa.row as f32,
                c0: pa.col as f32,
                r1: pb.row as f32,
                c1: pb.col as f32,
                half_width: rng.gen_range(1.5..2.5),
                color: SOLDER_COLOR,
            });
        }
        DefectKind::ForeignObject => {
            let radius = rng.gen_range(5.0..11.0);
            let row = rng.gen_range(20.0..(board.spec.height as f32 - 20.0));
            let col = rng.gen_range(20.0..(board.spec.width as f32 - 20.0));
            layout.overlays.push(Overlay::Blob {
                row,
                col,
                radius,
                wobble: [
                    rng.gen_range(0.0..std::f32::consts::TAU),
                    rng.gen_range(0.5..1.0),
                    rng.gen_range(0.0..std::f32::consts::TAU),
                    rng.gen_range(0.5..1.0),
                ],
                color: FOD_PALETTE[rng.gen_range(0..FOD_PALETTE.len())],
            });
        }
        DefectKind::ExtraComponent => {
            let mut placed = false;
            for _ in 0..400 {
                let ch = rng.gen_range(2..=4) * 8;
                let cw = rng.gen_range(2..=4) * 8;
                let row = rng.gen_range(1..(board.spec.height as i32 - 12 - ch) / 8) * 8;
                let col = rng.gen_range(1..(board.spec.width as i32 - 12 - cw) / 8) * 8;
                let clear = layout.components.iter().all(|c| {
                    row + ch + 4 <= c.row
                        || c.row + c.height + 4 <= row
                        || col + cw + 4 <= c.col
                        || c.col + c.width + 4 <= col
                });
                if clear {
                    layout.components.push(Component {
                        row,
                        col,
                        height: ch,
                        width: cw,
                        body: BODY_PALETTE[rng.gen_range(0..BODY_PALETTE.len())],
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::SiteNotFound(
                    "no free site for an extra component".into(),
                ));
            }
        }
        DefectKind::Misalignment => {
            if layout.components.is_empty() {
                return Err(Error::SiteNotFound("board has no components".into()));
            }
            let idx = rng.gen_range(0..layout.components.len());
            let shift = rng.gen_range(4..=12) * if rng.gen_bool(0.5) { 1 } else { -1 };
            let along_rows = rng.gen_bool(0.5);
            let comp = &mut layout.components[idx];
            if along_rows {
                comp.row = (comp.row + shift)
                    .clamp(2, board.spec.height as i32 - comp.height - 2);
            } else {
                comp.col = (comp.col + shift)
                    .clamp(2, board.spec.width as i32 - comp.width - 2);
            }
        }
    }

    let image = render_board(board, &layout);
    let annotation = diff_annotation(kind, &board.image, &image)?;
    Ok((image, annotation, layout))
}

fn diff_annotation(kind: DefectKind, clean: &Image, defective: &Image) -> Result<DefectAnnotation> {
    let (h, w) = (clean.height, clean.width);
    let mut mask = GateMask::zeros(h, w);
    for px in 0..h * w {
        let changed = (0..clean.channels)
            .any(|k| clean.data[px * clean.channels + k] != defective.data[px * clean.channels + k]);
        if changed {
            mask.data[px] = 1.0;
        }
    }
    let bbox = mask
        .bbox()
        .ok_or_else(|| Error::SiteNotFound(format!("{} altered no pixels", kind.name())))?;
    Ok(DefectAnnotation { kind, mask, bbox })
}

/// Re-expose the target layout for tests that need geometry oracles.
pub fn layout_of(board: &Board) -> &Layout {
    &board.layout
}
