//! Procedural circuit-board imagery: a deterministic generator of normal
//! boards, defect injection with exact pixel ground truth, and the
//! training-time corruption augmenter.
//!
//! The board *design* (component/pad/trace placement) is a pure function
//! of the board dimensions and element counts, so every board produced for
//! one dataset shares the same layout. The per-board `seed` drives only
//! instance variation: sub-pixel component jitter, substrate tint,
//! illumination slope, and sensor noise. Fixed design plus positional
//! variance is the regime the reconstruction model is meant to learn.

pub mod augment;
pub mod defects;

pub use augment::{augment_patch, AugmentConfig, AugmentedPair, CorruptionLog};
pub use defects::{inject_defect, sample_defect_kind, DefectAnnotation, DefectKind};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const MIN_BOARD_DIM: usize = 256;
const LATTICE: i32 = 8;

const SUBSTRATE: [f32; 3] = [0.055, 0.14, 0.09];
const TRACE_COLOR: [f32; 3] = [0.55, 0.42, 0.18];
const OUTLINE_COLOR: [f32; 3] = [0.78, 0.78, 0.8];
const PAD_CENTER: [f32; 3] = [0.88, 0.87, 0.8];
const PAD_EDGE: [f32; 3] = [0.34, 0.33, 0.28];
const BODY_PALETTE: [[f32; 3]; 4] = [
    [0.08, 0.08, 0.11],  // dark epoxy
    [0.62, 0.58, 0.45],  // ceramic beige
    [0.16, 0.16, 0.18],  // grey chip
    [0.35, 0.22, 0.12],  // brown tantalum
];

/// Deterministic description of one board instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoardSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub component_count: usize,
    pub trace_count: usize,
    pub pad_count: usize,
}

impl BoardSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_BOARD_DIM || self.width < MIN_BOARD_DIM {
            return Err(Error::Arg(format!(
                "board dims must be >= {MIN_BOARD_DIM}, got {}x{}",
                self.height, self.width
            )));
        }
        if self.component_count < 1 || self.trace_count < 1 || self.pad_count < 1 {
            return Err(Error::Arg("element counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Seed of the shared design: everything except the per-board seed.
    fn design_seed(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for v in [
            self.height as u64,
            self.width as u64,
            self.component_count as u64,
            self.trace_count as u64,
            self.pad_count as u64,
        ] {
            h ^= v;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub row: i32,
    pub col: i32,
    pub height: i32,
    pub width: i32,
    pub body: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pad {
    pub row: i32,
    pub col: i32,
    pub radius: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Axis-aligned segments (r0, c0, r1, c1).
    pub segments: Vec<(i32, i32, i32, i32)>,
    pub thickness: i32,
}

/// Post-render additions used by defect injection.
#[derive(Debug, Clone, PartialEq)]
pub enum Overlay {
    /// Solder bar between two points.
    Bar {
        r0: f32,
        c0: f32,
        r1: f32,
        c1: f32,
        half_width: f32,
        color: [f32; 3],
    },
    /// Irregular debris blob.
    Blob {
        row: f32,
        col: f32,
        radius: f32,
        wobble: [f32; 4],
        color: [f32; 3],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub components: Vec<Component>,
    pub pads: Vec<Pad>,
    pub pad_pairs: Vec<(usize, usize)>,
    pub traces: Vec<Trace>,
    pub overlays: Vec<Overlay>,
}

/// A rendered board plus everything needed to re-render variants of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Board {
    pub spec: BoardSpec,
    pub image: Image,
    pub layout: Layout,
    pub variation: Variation,
}

/// Per-board appearance variation, all derived from the board seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Variation {
    pub tint: [f32; 3],
    pub illum_slope: (f32, f32),
    pub noise_seed: u64,
}

/// Generate one board. Identical spec yields bitwise-identical pixels.
pub fn generate_board(spec: &BoardSpec) -> Result<Board> {
    spec.validate()?;
    let design = design_layout(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let tint = [
        rng.gen_range(-0.01..0.01),
        rng.gen_range(-0.01..0.01),
        rng.gen_range(-0.01..0.01),
    ];
    let illum_slope = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
    let noise_seed = rng.gen::<u64>();
    // positional variance: each component lands within +-1 px of its
    // lattice-designed spot, independently per board
    let mut layout = design;
    for comp in &mut layout.components {
        comp.row += rng.gen_range(-1..=1);
        comp.col += rng.gen_range(-1..=1);
    }
    let variation = Variation {
        tint,
        illum_slope,
        noise_seed,
    };
    let image = render(spec, &layout, &variation);
    Ok(Board {
        spec: *spec,
        image,
        layout,
        variation,
    })
}

/// Re-render a board's (possibly modified) layout with its variation.
pub fn render_board(board: &Board, layout: &Layout) -> Image {
    render(&board.spec, layout, &board.variation)
}

fn design_layout(spec: &BoardSpec) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.design_seed());
    let (h, w) = (spec.height as i32, spec.width as i32);
    let margin = 12i32;

    let mut traces = Vec::with_capacity(spec.trace_count);
    for _ in 0..spec.trace_count {
        let mut r = rng.gen_range(margin..h - margin);
        let mut c = rng.gen_range(margin..w - margin);
        let mut horizontal = rng.gen_bool(0.5);
        let thickness = rng.gen_range(1..=2);
        let n_seg = rng.gen_range(2..=4);
        let mut segments = Vec::with_capacity(n_seg);
        for _ in 0..n_seg {
            let len = rng.gen_range(24..=80) * if rng.gen_bool(0.5) { 1 } else { -1 };
            let (r1, c1) = if horizontal {
                (r, (c + len).clamp(margin, w - margin))
            } else {
                ((r + len).clamp(margin, h - margin), c)
            };
            segments.push((r, c, r1, c1));
            r = r1;
            c = c1;
            horizontal = !horizontal;
        }
        traces.push(Trace { segments, thickness });
    }

    let mut components: Vec<Component> = Vec::with_capacity(spec.component_count);
    let mut tries = 0;
    while components.len() < spec.component_count && tries < 4000 {
        tries += 1;
        let ch = rng.gen_range(2..=5) * LATTICE;
        let cw = rng.gen_range(2..=5) * LATTICE;
        let row = rng.gen_range(1..(h - margin - ch) / LATTICE) * LATTICE;
        let col = rng.gen_range(1..(w - margin - cw) / LATTICE) * LATTICE;
        let candidate = Component {
            row,
            col,
            height: ch,
            width: cw,
            body: BODY_PALETTE[rng.gen_range(0..BODY_PALETTE.len())],
        };
        let clear = components.iter().all(|c| {
            candidate.row + candidate.height + 6 <= c.row
                || c.row + c.height + 6 <= candidate.row
                || candidate.col + candidate.width + 6 <= c.col
                || c.col + c.width + 6 <= candidate.col
        });
        if clear {
            components.push(candidate);
        }
    }

    let mut pads: Vec<Pad> = Vec::new();
    let mut pad_pairs = Vec::new();
    let mut tries = 0;
    while pads.len() < spec.pad_count && tries < 4000 {
        tries += 1;
        let radius = rng.gen_range(3.0..6.0);
        let sep = rng.gen_range(11..=16);
        let vertical = rng.gen_bool(0.5);
        let row = rng.gen_range(margin..h - margin - sep);
        let col = rng.gen_range(margin..w - margin - sep);
        let (r2, c2) = if vertical { (row + sep, col) } else { (row, col + sep) };
        let clear = |pr: i32, pc: i32| {
            let pr_f = pr as f32;
            let pc_f = pc as f32;
            components.iter().all(|cm| {
                pr_f + radius + 2.0 <= cm.row as f32
                    || (cm.row + cm.height) as f32 + radius + 2.0 <= pr_f
                    || pc_f + radius + 2.0 <= cm.col as f32
                    || (cm.col + cm.width) as f32 + radius + 2.0 <= pc_f
            }) && pads.iter().all(|p| {
                let dr = p.row - pr;
                let dc = p.col - pc;
                ((dr * dr + dc * dc) as f32).sqrt() > p.radius + radius + 3.0
            })
        };
        if clear(row, col) && clear(r2, c2) {
            let a = pads.len();
            pads.push(Pad { row, col, radius });
            if pads.len() < spec.pad_count {
                pads.push(Pad {
                    row: r2,
                    col: c2,
                    radius,
                });
                pad_pairs.push((a, a + 1));
            }
        }
    }

    Layout {
        components,
        pads,
        pad_pairs,
        traces,
        overlays: Vec::new(),
    }
}

fn render(spec: &BoardSpec, layout: &Layout, var: &Variation) -> Image {
    let (h, w) = (spec.height, spec.width);
    let mut img = Image::zeros(h, w, 3);
    let base = [
        SUBSTRATE[0] + var.tint[0],
        SUBSTRATE[1] + var.tint[1],
        SUBSTRATE[2] + var.tint[2],
    ];
    for px in 0..h * w {
        img.data[px * 3..px * 3 + 3].copy_from_slice(&base);
    }

    for trace in &layout.traces {
        for &(r0, c0, r1, c1) in &trace.segments {
            let t = trace.thickness;
            let (rmin, rmax) = (r0.min(r1), r0.max(r1));
            let (cmin, cmax) = (c0.min(c1), c0.max(c1));
            paint_rect(
                &mut img,
                rmin - t / 2,
                cmin - t / 2,
                rmax - rmin + t,
                cmax - cmin + t,
                TRACE_COLOR,
            );
        }
    }

    for pad in &layout.pads {
        let r_i = pad.radius.ceil() as i32;
        for dr in -r_i..=r_i {
            for dc in -r_i..=r_i {
                let (r, c) = (pad.row + dr, pad.col + dc);
                if !in_bounds(&img, r, c) {
                    continue;
                }
                let d = ((dr * dr + dc * dc) as f32).sqrt();
                if d <= pad.radius {
                    // radial falloff fakes a specular highlight
                    let t = (d / pad.radius).powf(1.5);
                    let color = [
                        PAD_CENTER[0] + (PAD_EDGE[0] - PAD_CENTER[0]) * t,
                        PAD_CENTER[1] + (PAD_EDGE[1] - PAD_CENTER[1]) * t,
                        PAD_CENTER[2] + (PAD_EDGE[2] - PAD_CENTER[2]) * t,
                    ];
                    set_px(&mut img, r, c, color);
                }
            }
        }
    }

    for comp in &layout.components {
        paint_component(&mut img, comp);
    }

    for overlay in &layout.overlays {
        paint_overlay(&mut img, overlay);
    }

    // illumination gradient then sensor noise, both board-seeded
    let (ar, ac) = var.illum_slope;
    let mut noise = ChaCha8Rng::seed_from_u64(var.noise_seed);
    for r in 0..h {
        let fr = r as f32 / h as f32 - 0.5;
        for c in 0..w {
            let fc = c as f32 / w as f32 - 0.5;
            let gain = 1.0 + ar * fr + ac * fc;
            for k in 0..3 {
                let i = (r * w + c) * 3 + k;
                let n: f32 = noise.gen_range(-0.006..0.006);
                img.data[i] = (img.data[i] * gain + n).clamp(0.0, 1.0);
            }
        }
    }
    img
}

pub(crate) fn paint_component(img: &mut Image, comp: &Component) {
    paint_rect(img, comp.row, comp.col, comp.height, comp.width, comp.body);
    // 1-px bright outline on the rect border
    for c in comp.col..comp.col + comp.width {
        set_px(img, comp.row, c, OUTLINE_COLOR);
        set_px(img, comp.row + comp.height - 1, c, OUTLINE_COLOR);
    }
    for r in comp.row..comp.row + comp.height {
        set_px(img, r, comp.col, OUTLINE_COLOR);
        set_px(img, r, comp.col + comp.width - 1, OUTLINE_COLOR);
    }
}

fn paint_overlay(img: &mut Image, overlay: &Overlay) {
    match overlay {
        Overlay::Bar {
            r0,
            c0,
            r1,
            c1,
            half_width,
            color,
        } => {
            let rmin = (r0.min(*r1) - half_width).floor() as i32;
            let rmax = (r0.max(*r1) + half_width).ceil() as i32;
            let cmin = (c0.min(*c1) - half_width).floor() as i32;
            let cmax = (c0.max(*c1) + half_width).ceil() as i32;
            for r in rmin..=rmax {
                for c in cmin..=cmax {
                    if !in_bounds(img, r, c) {
                        continue;
                    }
                    if point_segment_dist(r as f32, c as f32, *r0, *c0, *r1, *c1) <= *half_width {
                        set_px(img, r, c, *color);
                    }
                }
            }
        }
        Overlay::Blob {
            row,
            col,
            radius,
            wobble,
            color,
        } => {
            let reach = radius * 1.6;
            let rmin = (row - reach).floor() as i32;
            let rmax = (row + reach).ceil() as i32;
            let cmin = (col - reach).floor() as i32;
            let cmax = (col + reach).ceil() as i32;
            for r in rmin..=rmax {
                for c in cmin..=cmax {
                    if !in_bounds(img, r, c) {
                        continue;
                    }
                    let dr = r as f32 - row;
                    let dc = c as f32 - col;
                    let d = (dr * dr + dc * dc).sqrt();
                    let theta = dc.atan2(dr);
                    let edge = radius
                        * (1.0
                            + 0.25 * (3.0 * theta + wobble[0]).sin() * wobble[1]
                            + 0.15 * (5.0 * theta + wobble[2]).sin() * wobble[3]);
                    if d <= edge {
                        set_px(img, r, c, *color);
                    }
                }
            }
        }
    }
}

fn point_segment_dist(pr: f32, pc: f32, r0: f32, c0: f32, r1: f32, c1: f32) -> f32 {
    let (vr, vc) = (r1 - r0, c1 - c0);
    let len2 = vr * vr + vc * vc;
    let t = if len2 > 0.0 {
        (((pr - r0) * vr + (pc - c0) * vc) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qr, qc) = (r0 + t * vr, c0 + t * vc);
    ((pr - qr) * (pr - qr) + (pc - qc) * (pc - qc)).sqrt()
}

fn in_bounds(img: &Image, r: i32, c: i32) -> bool {
    r >= 0 && c >= 0 && (r as usize) < img.height && (c as usize) < img.width
}

fn set_px(img: &mut Image, r: i32, c: i32, color: [f32; 3]) {
    if in_bounds(img, r, c) {
        let i = (r as usize * img.width + c as usize) * 3;
        img.data[i..i + 3].copy_from_slice(&color);
    }
}

fn paint_rect(img: &mut Image, row: i32, col: i32, h: i32, w: i32, color: [f32; 3]) {
    for r in row..row + h {
        for c in col..col + w {
            set_px(img, r, c, color);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> BoardSpec {
        BoardSpec {
            seed,
            height: 256,
            width: 256,
            component_count: 6,
            trace_count: 8,
            pad_count: 10,
        }
    }

    #[test]
    fn identical_spec_identical_pixels() {
        let a = generate_board(&small_spec(7)).unwrap();
        let b = generate_board(&small_spec(7)).unwrap();
        assert_eq!(a.image.data, b.image.data);
    }

    #[test]
    fn different_seeds_share_design_but_differ_in_pixels() {
        let a = generate_board(&small_spec(1)).unwrap();
        let b = generate_board(&small_spec(2)).unwrap();
        assert_ne!(a.image.data, b.image.data);
        // same design: component k sits within jitter of the same spot
        assert_eq!(a.layout.components.len(), b.layout.components.len());
        for (ca, cb) in a.layout.components.iter().zip(&b.layout.components) {
            assert!((ca.row - cb.row).abs() <= 2);
            assert!((ca.col - cb.col).abs() <= 2);
            assert_eq!((ca.height, ca.width), (cb.height, cb.width));
        }
    }

    #[test]
    fn rejects_small_dims_and_zero_counts() {
        let mut s = small_spec(1);
        s.height = 255;
        assert!(generate_board(&s).is_err());
        let mut s = small_spec(1);
        s.component_count = 0;
        assert!(generate_board(&s).is_err());
    }

    #[test]
    fn element_counts_are_honored() {
        let b = generate_board(&small_spec(3)).unwrap();
        assert_eq!(b.layout.components.len(), 6);
        assert_eq!(b.layout.traces.len(), 8);
        assert_eq!(b.layout.pads.len(), 10);
        assert!(!b.layout.pad_pairs.is_empty());
    }

    /// Regression band for the generator's overall appearance: mean
    /// luminance over 20 seeded boards. Band frozen from the first
    /// implementation run with generous slack; a drift outside it means
    /// the generator changed in a way that invalidates trained models.
    #[test]
    fn mean_luminance_regression_band() {
        let mut acc = 0.0f64;
        for seed in 0..20 {
            let b = generate_board(&small_spec(seed)).unwrap();
            acc += b.image.mean();
        }
        let mean = acc / 20.0;
        assert!(
            (0.10..=0.22).contains(&mean),
            "mean luminance {mean} left the frozen band"
        );
    }

    #[test]
    fn values_stay_in_unit_range() {
        let b = generate_board(&small_spec(11)).unwrap();
        assert!(b.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
