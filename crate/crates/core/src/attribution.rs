//! Hide-and-seek attribution.
//!
//! A malignant-gated image is edited to a healthy latent, the signed
//! residual against the healthy reconstruction proposes candidate regions,
//! and each candidate is scored by revealing it alone (all other candidates
//! replaced with their healthy appearance), projecting the result through
//! the autoencoder, and measuring how much of the original malignancy
//! probability survives.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{GateDecision, LinearClassifier};
use crate::error::{Error, Result};
use crate::imaging::{
    connected_components, erode, filter_small_components, mean_threshold, BinaryMask, Connectivity, Grid, Image,
    InstanceLabeling, RealMap,
};
use crate::latent::{Latent, SemanticAutoencoder};
use crate::phantom::Phenotype;

/// Sign of the residual a candidate was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// `D⁺ = max(I - I_healthy, 0)`: brighter than healthy.
    Positive,
    /// `D⁻ = max(I_healthy - I, 0)`: darker than healthy.
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

/// Which residual polarity yields which lesion phenotype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarityMap {
    pub lytic: Polarity,
    pub blastic: Polarity,
}

impl Default for PolarityMap {
    /// Lytic lesions are hypodense, blastic lesions hyperdense.
    fn default() -> Self {
        Self {
            lytic: Polarity::Negative,
            blastic: Polarity::Positive,
        }
    }
}

impl PolarityMap {
    pub fn polarity_of(&self, phenotype: Phenotype) -> Option<Polarity> {
        match phenotype {
            Phenotype::Lytic => Some(self.lytic),
            Phenotype::Blastic => Some(self.blastic),
            _ => None,
        }
    }

    /// Phenotype a polarity maps to; lytic wins if both map to the same sign.
    pub fn phenotype_of(&self, polarity: Polarity) -> Option<Phenotype> {
        if self.lytic == polarity {
            Some(Phenotype::Lytic)
        } else if self.blastic == polarity {
            Some(Phenotype::Blastic)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhenotypeFilter {
    LyticOnly,
    BlasticOnly,
    Both,
}

impl PhenotypeFilter {
    /// Filter implied by a patient-level phenotype label.
    pub fn for_phenotype(phenotype: Phenotype) -> Self {
        match phenotype {
            Phenotype::Lytic => PhenotypeFilter::LyticOnly,
            Phenotype::Blastic => PhenotypeFilter::BlasticOnly,
            Phenotype::Mixed | Phenotype::None => PhenotypeFilter::Both,
        }
    }

    pub fn admits(self, phenotype: Phenotype) -> bool {
        matches!(
            (self, phenotype),
            (PhenotypeFilter::Both, Phenotype::Lytic | Phenotype::Blastic)
                | (PhenotypeFilter::LyticOnly, Phenotype::Lytic)
                | (PhenotypeFilter::BlasticOnly, Phenotype::Blastic)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binarization {
    #[default]
    Mean,
}

/// Region restriction and clean-up applied identically by every method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostProcess {
    pub erosion_iterations: usize,
    pub min_component_size: usize,
    pub connectivity: Connectivity,
}

impl PostProcess {
    /// Vertebral-body mask eroded to avoid boundary spillover.
    pub fn roi(&self, body_mask: &BinaryMask) -> Result<BinaryMask> {
        let roi = erode(body_mask, self.erosion_iterations);
        if !roi.any() {
            return Err(Error::EmptyRoi);
        }
        Ok(roi)
    }

    /// Restricts to the ROI, drops small components and labels instances.
    pub fn finalize(&self, mask: &BinaryMask, roi: &BinaryMask) -> Result<InstanceLabeling> {
        let restricted = mask.intersection(roi)?;
        let lab = connected_components(&restricted, self.connectivity);
        Ok(filter_small_components(&lab, self.min_component_size.max(1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionConfig {
    pub p_target: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub binarization: Binarization,
    pub connectivity: Connectivity,
    pub min_component_size: usize,
    pub erosion_iterations: usize,
    pub polarity_map: PolarityMap,
    pub phenotype_filter: PhenotypeFilter,
    pub gate_cutoff: f64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            p_target: 1e-4,
            tau: 0.5,
            epsilon: 1e-8,
            binarization: Binarization::Mean,
            connectivity: Connectivity::Eight,
            min_component_size: 5,
            erosion_iterations: 2,
            polarity_map: PolarityMap::default(),
            phenotype_filter: PhenotypeFilter::Both,
            gate_cutoff: 0.5,
        }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument("tau and epsilon must be positive".into()));
        }
        if !(self.p_target > 0.0 && self.p_target < 1.0) || !(0.0..=1.0).contains(&self.gate_cutoff) {
            return Err(Error::InvalidArgument(
                "p_target must lie in (0,1), gate_cutoff in [0,1]".into(),
            ));
        }
        Ok(())
    }

    pub fn post_process(&self) -> PostProcess {
        PostProcess {
            erosion_iterations: self.erosion_iterations,
            min_component_size: self.min_component_size,
            connectivity: self.connectivity,
        }
    }

    pub fn with_filter(&self, filter: PhenotypeFilter) -> Self {
        Self {
            phenotype_filter: filter,
            ..self.clone()
        }
    }
}

/// `D⁺` and `D⁻` of the residual `D = I - I_healthy`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPair {
    pub d_pos: RealMap,
    pub d_neg: RealMap,
}

impl ResidualPair {
    pub fn select(&self, polarity: Polarity) -> &RealMap {
        match polarity {
            Polarity::Positive => &self.d_pos,
            Polarity::Negative => &self.d_neg,
        }
    }
}

pub fn compute_residuals(img: &Image, img_healthy: &Image) -> Result<ResidualPair> {
    img.grid().ensure_same_dims(img_healthy.grid())?;
    let (w, h) = img.dims();
    let diff: Vec<f64> = img
        .pixels()
        .iter()
        .zip(img_healthy.pixels())
        .map(|(a, b)| a - b)
        .collect();
    Ok(ResidualPair {
        d_pos: Grid::from_vec(w, h, diff.iter().map(|&d| d.max(0.0)).collect())?,
        d_neg: Grid::from_vec(w, h, diff.iter().map(|&d| (-d).max(0.0)).collect())?,
    })
}

/// Mean-thresholds one residual polarity inside the ROI and splits the
/// result into connected components, one mask each.
pub fn extract_candidates(
    res: &ResidualPair,
    polarity: Polarity,
    roi: &BinaryMask,
    cfg: &AttributionConfig,
) -> Result<Vec<BinaryMask>> {
    let binary = match cfg.binarization {
        Binarization::Mean => mean_threshold(res.select(polarity), roi)?,
    };
    Ok(connected_components(&binary, cfg.connectivity).instance_masks())
}

/// Keeps `img` on `keep` and everywhere outside `others`; takes the healthy
/// reconstruction on `others`.
pub fn occlude(img: &Image, img_healthy: &Image, keep: &BinaryMask, others: &BinaryMask) -> Result<Image> {
    img.grid().ensure_same_dims(img_healthy.grid())?;
    img.grid().ensure_same_dims(keep.grid())?;
    img.grid().ensure_same_dims(others.grid())?;
    let overlap = keep.overlap_count(others)?;
    if overlap > 0 {
        return Err(Error::OverlappingMasks(overlap));
    }
    let pixels = img
        .pixels()
        .iter()
        .zip(img_healthy.pixels())
        .zip(others.bits())
        .map(|((&orig, &healthy), &hidden)| if hidden { healthy } else { orig })
        .collect();
    Image::new(img.width(), img.height(), pixels)
}

/// Fraction of the original malignancy probability retained when only the
/// candidate is revealed, clamped below at zero.
pub fn delta_score(
    clf: &LinearClassifier,
    z: &Latent,
    z_healthy: &Latent,
    z_hide: &Latent,
    epsilon: f64,
) -> Result<f64> {
    let c = clf.probability(z)?;
    let c_healthy = clf.probability(z_healthy)?;
    let c_hide = clf.probability(z_hide)?;
    Ok(((c_hide - c_healthy) / (c - c_healthy + epsilon)).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HealthyReconstruction {
    pub z: Latent,
    pub z_healthy: Latent,
    pub image_healthy: Image,
}

pub fn healthy_reconstruction<M: SemanticAutoencoder + ?Sized>(
    model: &M,
    clf: &LinearClassifier,
    img: &Image,
    cfg: &AttributionConfig,
) -> Result<HealthyReconstruction> {
    let z = model.encode(img)?;
    let z_healthy = clf.healthy_edit(&z, cfg.p_target)?;
    let image_healthy = model.decode(&z_healthy)?;
    Ok(HealthyReconstruction {
        z,
        z_healthy,
        image_healthy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionCandidate {
    pub mask: BinaryMask,
    pub polarity: Polarity,
    pub delta: f64,
    pub size: usize,
    pub hide_probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub lytic: InstanceLabeling,
    pub blastic: InstanceLabeling,
    pub kept_candidates: Vec<LesionCandidate>,
    pub rejected_candidates: Vec<LesionCandidate>,
    pub gate_decision: GateDecision,
    pub original_probability: f64,
    pub healthy_probability: f64,
    pub warnings: Vec<String>,
}

impl SegmentationResult {
    pub fn empty(width: usize, height: usize, gate_decision: GateDecision) -> Self {
        Self {
            lytic: InstanceLabeling::empty(width, height),
            blastic: InstanceLabeling::empty(width, height),
            kept_candidates: Vec::new(),
            rejected_candidates: Vec::new(),
            gate_decision,
            original_probability: f64::NAN,
            healthy_probability: f64::NAN,
            warnings: Vec::new(),
        }
    }

    /// Prediction for one phenotype; mixed merges both labelings.
    pub fn prediction(&self, phenotype: Phenotype) -> InstanceLabeling {
        match phenotype {
            Phenotype::Lytic => self.lytic.clone(),
            Phenotype::Blastic => self.blastic.clone(),
            Phenotype::Mixed => crate::phantom::merge_labelings(&self.lytic, &self.blastic),
            Phenotype::None => InstanceLabeling::empty(self.lytic.width(), self.lytic.height()),
        }
    }

    /// Kept and rejected candidates in extraction order.
    pub fn candidates(&self) -> Vec<(&LesionCandidate, bool)> {
        let mut all: Vec<_> = self
            .kept_candidates
            .iter()
            .map(|c| (c, true))
            .chain(self.rejected_candidates.iter().map(|c| (c, false)))
            .collect();
        all.sort_by_key(|(c, _)| c.mask.indices().next());
        all
    }
}

/// Full hide-and-seek segmentation of one vertebral slice.
pub fn segment_vertebra<M: SemanticAutoencoder + ?Sized>(
    model: &M,
    clf: &LinearClassifier,
    img: &Image,
    body_mask: &BinaryMask,
    cfg: &AttributionConfig,
) -> Result<SegmentationResult> {
    cfg.validate()?;
    img.grid().ensure_same_dims(body_mask.grid())?;
    let post = cfg.post_process();
    let roi = post.roi(body_mask)?;
    let (w, h) = img.dims();

    let z = model.encode(img)?;
    let original_probability = clf.probability(&z)?;
    if clf.gate(&z, cfg.gate_cutoff)? == GateDecision::Healthy {
        return Ok(SegmentationResult {
            original_probability,
            ..SegmentationResult::empty(w, h, GateDecision::Healthy)
        });
    }

    let rec = healthy_reconstruction(model, clf, img, cfg)?;
    let healthy_probability = clf.probability(&rec.z_healthy)?;
    let residuals = compute_residuals(img, &rec.image_healthy)?;

    let mut candidates = Vec::new();
    for polarity in [Polarity::Positive, Polarity::Negative] {
        for mask in extract_candidates(&residuals, polarity, &roi, cfg)? {
            candidates.push((polarity, mask));
        }
    }
    let suspects = candidates
        .iter()
        .try_fold(BinaryMask::empty(w, h), |acc, (_, m)| acc.union(m))?;

    let admitted = |p: Polarity| {
        cfg.polarity_map
            .phenotype_of(p)
            .is_some_and(|ph| cfg.phenotype_filter.admits(ph))
    };
    let scored: Vec<Option<LesionCandidate>> = candidates
        .par_iter()
        .map(|(polarity, mask)| {
            if !admitted(*polarity) {
                return Ok(None);
            }
            let others = suspects.difference(mask)?;
            let hidden = occlude(img, &rec.image_healthy, mask, &others)?;
            let (projected, _) = model.project(&hidden)?;
            let z_hide = model.encode(&projected)?;
            Ok(Some(LesionCandidate {
                size: mask.count(),
                mask: mask.clone(),
                polarity: *polarity,
                delta: delta_score(clf, &rec.z, &rec.z_healthy, &z_hide, cfg.epsilon)?,
                hide_probability: clf.probability(&z_hide)?,
            }))
        })
        .collect::<Result<_>>()?;

    let (kept, rejected): (Vec<_>, Vec<_>) = scored.into_iter().flatten().partition(|c| c.delta >= cfg.tau);

    let assemble = |phenotype: Phenotype| -> Result<InstanceLabeling> {
        let polarity = cfg.polarity_map.polarity_of(phenotype).expect("lesion phenotype");
        if !cfg.phenotype_filter.admits(phenotype) {
            return Ok(InstanceLabeling::empty(w, h));
        }
        let union = kept
            .iter()
            .filter(|c| c.polarity == polarity)
            .try_fold(BinaryMask::empty(w, h), |acc, c| acc.union(&c.mask))?;
        post.finalize(&union, &roi)
    };

    Ok(SegmentationResult {
        lytic: assemble(Phenotype::Lytic)?,
        blastic: assemble(Phenotype::Blastic)?,
        kept_candidates: kept,
        rejected_candidates: rejected,
        gate_decision: GateDecision::Malignant,
        original_probability,
        healthy_probability,
        warnings: Vec::new(),
    })
}

/// One row of the lesion-wise analysis table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRow {
    pub sample_id: String,
    pub phenotype: String,
    pub polarity: Polarity,
    pub size: usize,
    pub delta: f64,
    pub kept: bool,
    pub true_positive: bool,
    pub original_probability: f64,
    pub hide_probability: f64,
}

/// One row per scored candidate; a candidate is a true positive when it
/// overlaps any ground-truth instance of its phenotype.
pub fn export_lesion_analysis<'a>(
    results: impl IntoIterator<Item = (&'a str, &'a SegmentationResult, &'a crate::phantom::PhantomSample)>,
    polarity_map: &PolarityMap,
) -> Result<Vec<LesionRow>> {
    let mut rows = Vec::new();
    for (sample_id, result, sample) in results {
        for (cand, kept) in result.candidates() {
            let phenotype = polarity_map.phenotype_of(cand.polarity);
            let gt = match phenotype {
                Some(p) => sample.ground_truth(p).foreground(),
                None => BinaryMask::empty(cand.mask.width(), cand.mask.height()),
            };
            rows.push(LesionRow {
                sample_id: sample_id.to_string(),
                phenotype: phenotype.map_or("none", Phenotype::as_str).to_string(),
                polarity: cand.polarity,
                size: cand.size,
                delta: cand.delta,
                kept,
                true_positive: cand.mask.overlap_count(&gt)? > 0,
                original_probability: result.original_probability,
                hide_probability: cand.hide_probability,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, f: impl FnMut(usize, usize) -> f64) -> Image {
        Image::from_fn(w, h, f).unwrap()
    }

    #[test]
    fn residuals_of_identical_images_are_zero() {
        let a = img(8, 8, |x, y| (x + y) as f64 / 14.0);
        let r = compute_residuals(&a, &a).unwrap();
        assert!(r.d_pos.as_slice().iter().chain(r.d_neg.as_slice()).all(|&v| v == 0.0));
    }

    #[test]
    fn single_bright_pixel_goes_to_positive_map() {
        let healthy = Image::constant(8, 8, 0.4).unwrap();
        let a = img(8, 8, |x, y| if (x, y) == (3, 5) { 0.7 } else { 0.4 });
        let r = compute_residuals(&a, &healthy).unwrap();
        assert!((r.d_pos.get(3, 5) - 0.3).abs() < 1e-15);
        assert_eq!(r.d_pos.as_slice().iter().filter(|&&v| v != 0.0).count(), 1);
        assert!(r.d_neg.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_residual_yields_no_candidates() {
        let a = Image::constant(8, 8, 0.5).unwrap();
        let r = compute_residuals(&a, &a).unwrap();
        let c = extract_candidates(
            &r,
            Polarity::Positive,
            &BinaryMask::full(8, 8),
            &AttributionConfig::default(),
        )
        .unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn two_blobs_two_candidates() {
        let healthy = Image::constant(16, 16, 0.3).unwrap();
        let a = img(16, 16, |x, y| {
            if (2..5).contains(&x) && (2..5).contains(&y) || (10..13).contains(&x) && (9..12).contains(&y) {
                0.8
            } else {
                0.3
            }
        });
        let r = compute_residuals(&a, &healthy).unwrap();
        let c = extract_candidates(
            &r,
            Polarity::Positive,
            &BinaryMask::full(16, 16),
            &AttributionConfig::default(),
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        assert!(extract_candidates(
            &r,
            Polarity::Positive,
            &BinaryMask::empty(16, 16),
            &AttributionConfig::default()
        )
        .is_err());
    }

    #[test]
    fn occlusion_edge_cases() {
        let a = img(8, 8, |x, _| x as f64 / 8.0);
        let hl = Image::constant(8, 8, 0.25).unwrap();
        let none = BinaryMask::empty(8, 8);
        let all = BinaryMask::full(8, 8);
        assert_eq!(occlude(&a, &hl, &none, &none).unwrap(), a);
        assert_eq!(occlude(&a, &hl, &none, &all).unwrap(), hl);
        assert!(matches!(occlude(&a, &hl, &all, &all), Err(Error::OverlappingMasks(64))));
    }

    #[test]
    fn delta_boundary_cases() {
        let clf = LinearClassifier::new(vec![1.0, 0.0], 0.0).unwrap();
        let z = Latent::new(vec![3.0, 0.0]).unwrap();
        let zh = Latent::new(vec![-9.0, 0.0]).unwrap();
        assert_eq!(delta_score(&clf, &z, &zh, &zh, 1e-8).unwrap(), 0.0);
        let full = delta_score(&clf, &z, &zh, &z, 1e-8).unwrap();
        assert!(full < 1.0 && full > 1.0 - 1e-7);
        let below = Latent::new(vec![-12.0, 0.0]).unwrap();
        assert_eq!(delta_score(&clf, &z, &zh, &below, 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn polarity_defaults_follow_density() {
        let m = PolarityMap::default();
        assert_eq!(m.polarity_of(Phenotype::Blastic), Some(Polarity::Positive));
        assert_eq!(m.phenotype_of(Polarity::Negative), Some(Phenotype::Lytic));
        assert!(PhenotypeFilter::Both.admits(Phenotype::Lytic));
        assert!(!PhenotypeFilter::BlasticOnly.admits(Phenotype::Lytic));
    }
}
