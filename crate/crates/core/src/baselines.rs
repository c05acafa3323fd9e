//! Reference segmenters sharing the attribution post-processing:
//! Otsu intensity thresholding and pseudo-healthy anomaly detection.

use crate::attribution::{
    compute_residuals, extract_candidates, AttributionConfig, LesionCandidate, PhenotypeFilter, PostProcess,
    SegmentationResult,
};
use crate::classifier::GateDecision;
use crate::error::{Error, Result};
use crate::imaging::{otsu_thresholds, BinaryMask, Image, InstanceLabeling};
use crate::latent::SemanticAutoencoder;
use crate::phantom::Phenotype;

/// Otsu segmentation of the eroded body. Lytic-only uses one threshold and
/// takes the dark class, blastic-only takes the bright class, and both uses
/// two thresholds with the dark and bright extremes.
pub fn otsu_baseline(
    img: &Image,
    body_mask: &BinaryMask,
    filter: PhenotypeFilter,
    post: &PostProcess,
) -> Result<SegmentationResult> {
    img.grid().ensure_same_dims(body_mask.grid())?;
    let (w, h) = img.dims();
    let roi = post.roi(body_mask)?;
    let levels = if filter == PhenotypeFilter::Both { 2 } else { 1 };
    let mut result = SegmentationResult::empty(w, h, GateDecision::Malignant);
    let thresholds = match otsu_thresholds(img, &roi, levels) {
        Ok(t) => t,
        Err(Error::DegenerateHistogram) => {
            result.warnings.push("degenerate histogram".into());
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    let (low, high) = (thresholds[0], *thresholds.last().expect("at least one threshold"));
    let dark = BinaryMask::from_fn(w, h, |x, y| img.get(x, y) < low);
    let bright = BinaryMask::from_fn(w, h, |x, y| img.get(x, y) >= high);
    if filter.admits(Phenotype::Lytic) {
        result.lytic = post.finalize(&dark, &roi)?;
    }
    if filter.admits(Phenotype::Blastic) {
        result.blastic = post.finalize(&bright, &roi)?;
    }
    Ok(result)
}

/// Anomaly detection against a healthy-only model: every residual candidate
/// of an admitted polarity is kept.
pub fn ad_baseline<M: SemanticAutoencoder + ?Sized>(
    healthy_model: &M,
    img: &Image,
    body_mask: &BinaryMask,
    cfg: &AttributionConfig,
) -> Result<SegmentationResult> {
    img.grid().ensure_same_dims(body_mask.grid())?;
    let (w, h) = img.dims();
    let post = cfg.post_process();
    let roi = post.roi(body_mask)?;
    let (pseudo_healthy, _) = healthy_model.project(img)?;
    let residuals = compute_residuals(img, &pseudo_healthy)?;
    let mut result = SegmentationResult::empty(w, h, GateDecision::Malignant);

    for phenotype in [Phenotype::Lytic, Phenotype::Blastic] {
        if !cfg.phenotype_filter.admits(phenotype) {
            continue;
        }
        let polarity = cfg.polarity_map.polarity_of(phenotype).expect("lesion phenotype");
        let masks = extract_candidates(&residuals, polarity, &roi, cfg)?;
        let union = masks.iter().try_fold(BinaryMask::empty(w, h), |acc, m| acc.union(m))?;
        let labeling: InstanceLabeling = post.finalize(&union, &roi)?;
        result
            .kept_candidates
            .extend(masks.into_iter().map(|mask| LesionCandidate {
                size: mask.count(),
                mask,
                polarity,
                delta: 0.0,
                hide_probability: f64::NAN,
            }));
        match phenotype {
            Phenotype::Lytic => result.lytic = labeling,
            _ => result.blastic = labeling,
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Connectivity;

    fn post() -> PostProcess {
        PostProcess {
            erosion_iterations: 2,
            min_component_size: 5,
            connectivity: Connectivity::Eight,
        }
    }

    #[test]
    fn constant_image_is_degenerate() {
        let img = Image::constant(16, 16, 0.4).unwrap();
        let r = otsu_baseline(&img, &BinaryMask::full(16, 16), PhenotypeFilter::Both, &post()).unwrap();
        assert!(r.lytic.is_empty() && r.blastic.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn three_level_image_splits_both_ways() {
        let img = Image::from_fn(24, 24, |x, _| match x {
            0..=7 => 0.2,
            8..=15 => 0.5,
            _ => 0.8,
        })
        .unwrap();
        let body = BinaryMask::full(24, 24);
        let r = otsu_baseline(&img, &body, PhenotypeFilter::Both, &post()).unwrap();
        assert_eq!(r.lytic.count(), 1);
        assert_eq!(r.blastic.count(), 1);
        assert_eq!(r.lytic.foreground().overlap_count(&r.blastic.foreground()).unwrap(), 0);
        assert!(r.lytic.foreground().get(5, 10) && r.blastic.foreground().get(18, 10));

        let b = otsu_baseline(&img, &body, PhenotypeFilter::BlasticOnly, &post()).unwrap();
        assert!(b.lytic.is_empty() && !b.blastic.is_empty());
    }
}
