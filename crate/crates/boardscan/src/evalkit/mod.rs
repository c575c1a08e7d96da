//! Anomaly maps, pixel metrics (AUROC, AUPRO), connected components, and
//! defect-level matching with false-positive counting.

pub mod components;
pub mod metrics;

pub use components::{binarize_components, match_defects, PredictedComponent};
pub use metrics::{aupro, pixel_auroc};

use crate::error::{Error, Result};
use crate::imaging::{GateMask, Image};

/// Per-pixel anomaly scores: raw channel-mean absolute difference and the
/// per-image min-max normalization of it.
#[derive(Debug, Clone)]
pub struct AnomalyMap {
    pub height: usize,
    pub width: usize,
    pub raw: Vec<f32>,
    pub normalized: Vec<f32>,
}

impl AnomalyMap {
    /// Build from raw scores; normalized = (raw - min)/(max - min), or all
    /// zeros when the map is constant.
    pub fn from_raw(height: usize, width: usize, raw: Vec<f32>) -> Result<AnomalyMap> {
        if raw.len() != height * width {
            return Err(Error::Shape("anomaly map length mismatch".into()));
        }
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &raw {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let normalized = if hi > lo {
            let inv = 1.0 / (hi - lo);
            raw.iter().map(|&v| (v - lo) * inv).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Ok(AnomalyMap {
            height,
            width,
            raw,
            normalized,
        })
    }

    pub fn normalized_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.normalized.clone(),
        }
    }
}

/// Channel-mean absolute difference between the merged reconstruction and
/// the original image, min-max normalized per image.
pub fn anomaly_map(merged: &Image, original: &Image) -> Result<AnomalyMap> {
    if !merged.same_shape(original) {
        return Err(Error::Shape(format!(
            "anomaly map inputs {}x{}x{} vs {}x{}x{}",
            merged.height,
            merged.width,
            merged.channels,
            original.height,
            original.width,
            original.channels
        )));
    }
    let ch = merged.channels;
    let n = merged.height * merged.width;
    let mut raw = Vec::with_capacity(n);
    for px in 0..n {
        let mut acc = 0.0f32;
        for k in 0..ch {
            acc += (merged.data[px * ch + k] - original.data[px * ch + k]).abs();
        }
        raw.push(acc / ch as f32);
    }
    AnomalyMap::from_raw(merged.height, merged.width, raw)
}

/// Everything the evaluation protocol reports.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pixel_auroc: f64,
    pub aupro: f64,
    /// Defect-level precision in [0, 1]; 0 with `precision_defined` unset
    /// when no predictions exist.
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub fp_count_defect_free: usize,
}

/// One evaluated defect image: its normalized scores and ground truth.
pub struct ScoredImage {
    pub map: AnomalyMap,
    pub gt: GateMask,
}

/// Pooled evaluation over defect images plus FP counting on defect-free
/// images, all binarized at one global threshold.
pub fn evaluate_suite(
    defect_images: &[ScoredImage],
    defect_free_maps: &[AnomalyMap],
    theta: f32,
    min_area: usize,
    fpr_cap: f64,
) -> Result<EvalReport> {
    if defect_images.is_empty() {
        return Err(Error::Metric("no defect images to evaluate".into()));
    }
    // pooled pixel scores and labels over all defect images
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for si in defect_images {
        if si.gt.height != si.map.height || si.gt.width != si.map.width {
            return Err(Error::Shape("ground truth does not match map dims".into()));
        }
        scores.extend(si.map.normalized.iter().map(|&v| v as f64));
        labels.extend(si.gt.data.iter().map(|&v| v > 0.5));
    }
    let pixel_auroc = metrics::pixel_auroc(&scores, &labels)?;
    let aupro = metrics::aupro_pooled(defect_images, fpr_cap)?;

    // defect-level matching per image at the single global threshold
    let (mut tp, mut fp, mut fn_count) = (0usize, 0usize, 0usize);
    for si in defect_images {
        let preds = binarize_components(&si.map, theta, min_area);
        let gts = components::gt_components(&si.gt);
        let outcome = match_defects(&preds, &gts);
        tp += outcome.tp;
        fp += outcome.fp;
        fn_count += outcome.fn_count;
    }
    let mut fp_count_defect_free = 0usize;
    for map in defect_free_maps {
        fp_count_defect_free += binarize_components(map, theta, min_area).len();
    }

    let precision_defined = tp + fp > 0;
    let precision = if precision_defined {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_count > 0 {
        tp as f64 / (tp + fn_count) as f64
    } else {
        0.0
    };
    Ok(EvalReport {
        pixel_auroc,
        aupro,
        precision,
        recall,
        precision_defined,
        tp,
        fp,
        fn_count,
        fp_count_defect_free,
    })
}
