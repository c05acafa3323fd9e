//! Deterministic synthetic vertebral-body slices with planted lesions.
//!
//! Each sample is drawn from a ChaCha stream keyed on `(seed, index)`, so any
//! sample can be regenerated in isolation and splits can be generated in
//! parallel. Blastic lesions are hyperdense blobs, lytic lesions hypodense
//! ones. Blobs are unions of 1-3 soft-edged discs; the ground truth instance
//! is the set of pixels inside any disc.
//!
//! Healthy anatomy includes a bright cortical rim, a hypodense basivertebral
//! vein near the posterior wall, a low-rank trabecular texture and faint
//! benign blobs of either polarity. Benign mimics are lesion-like blobs of
//! random polarity in a lateral band away from the lesion sites. Benign blobs
//! and mimics appear in healthy and malignant samples alike and are never
//! part of the ground truth.
//!
//! Lesion sites follow a phenotype-specific prior: blastic lesions seed in
//! the anterior half of the body, lytic lesions in the posterior half, at a
//! configurable depth and lateral spread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{dilate, erode, BinaryMask, Grid, Image, InstanceLabeling, RealMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Malignant,
}

impl Label {
    pub fn as_class(self) -> u8 {
        match self {
            Label::Healthy => 0,
            Label::Malignant => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phenotype {
    None,
    Lytic,
    Blastic,
    Mixed,
}

impl Phenotype {
    pub fn as_str(self) -> &'static str {
        match self {
            Phenotype::None => "none",
            Phenotype::Lytic => "lytic",
            Phenotype::Blastic => "blastic",
            Phenotype::Mixed => "mixed",
        }
    }

    const MALIGNANT: [Phenotype; 3] = [Phenotype::Blastic, Phenotype::Lytic, Phenotype::Mixed];
}

impl std::fmt::Display for Phenotype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive range used for every randomized phantom parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span<T> {
    pub min: T,
    pub max: T,
}

impl<T: PartialOrd + Copy> Span<T> {
    pub const fn new(min: T, max: T) -> Self {
        Self { min, max }
    }

    fn is_valid(&self) -> bool {
        self.min <= self.max
    }
}

impl Span<f64> {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }
}

impl Span<usize> {
    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Easy,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    /// Half-widths of the vertebral body (pixels).
    pub body_semi_x: Span<f64>,
    pub body_semi_y: Span<f64>,
    pub center_jitter: f64,
    /// Superellipse exponent; 2 is an ellipse, larger is boxier.
    pub body_exponent: f64,
    pub edge_softness: f64,
    pub background: f64,
    pub body_intensity: Span<f64>,
    pub rim_boost: Span<f64>,
    pub rim_width: f64,
    pub vein_depth: Span<f64>,
    pub texture_amplitude: f64,
    pub noise_sigma: f64,
    pub blastic_count: Span<usize>,
    pub lytic_count: Span<usize>,
    /// Per-polarity count for mixed vertebrae.
    pub mixed_count: Span<usize>,
    pub lesion_radius: Span<f64>,
    pub lesion_contrast: Span<f64>,
    /// Seed depth along the anterior-posterior axis, as a fraction of the
    /// half-width: blastic seeds at `-depth`, lytic at `+depth`.
    pub lesion_depth: Span<f64>,
    /// Largest lateral seed offset, as a fraction of the half-height.
    pub lesion_spread: f64,
    /// Benign lesion-like blobs of the polarity not expected at their site.
    pub mimic_count: Span<usize>,
    pub mimic_radius: Span<f64>,
    pub mimic_contrast: Span<f64>,
    pub distractor_count: Span<usize>,
    pub distractor_radius: Span<f64>,
    pub distractor_contrast: Span<f64>,
    pub max_attempts: usize,
}

impl PhantomConfig {
    pub fn preset(regime: Regime) -> Self {
        match regime {
            Regime::Easy => Self::easy(),
            Regime::Hard => Self::hard(),
        }
    }

    /// High contrast, low noise.
    pub fn easy() -> Self {
        Self {
            width: 64,
            height: 64,
            body_semi_x: Span::new(21.0, 22.0),
            body_semi_y: Span::new(18.0, 19.0),
            center_jitter: 0.5,
            body_exponent: 4.0,
            edge_softness: 0.8,
            background: 0.1,
            body_intensity: Span::new(0.45, 0.52),
            rim_boost: Span::new(0.12, 0.20),
            rim_width: 4.0,
            vein_depth: Span::new(0.10, 0.16),
            texture_amplitude: 0.02,
            noise_sigma: 0.004,
            blastic_count: Span::new(1, 1),
            lytic_count: Span::new(1, 1),
            mixed_count: Span::new(1, 1),
            lesion_radius: Span::new(3.5, 5.5),
            lesion_contrast: Span::new(0.18, 0.26),
            lesion_depth: Span::new(0.25, 0.5),
            lesion_spread: 0.2,
            mimic_count: Span::new(1, 2),
            mimic_radius: Span::new(2.0, 2.8),
            mimic_contrast: Span::new(0.14, 0.22),
            distractor_count: Span::new(0, 2),
            distractor_radius: Span::new(1.5, 3.0),
            distractor_contrast: Span::new(0.03, 0.06),
            max_attempts: 200,
        }
    }

    /// Low contrast, more noise, more and smaller lesions spread over the body.
    pub fn hard() -> Self {
        Self {
            blastic_count: Span::new(1, 2),
            lytic_count: Span::new(1, 2),
            lesion_depth: Span::new(0.0, 0.8),
            lesion_spread: 0.3,
            noise_sigma: 0.02,
            lesion_contrast: Span::new(0.07, 0.14),
            lesion_radius: Span::new(2.0, 4.5),
            texture_amplitude: 0.03,
            ..Self::easy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("phantom config: {what}")));
        if self.width < 8 || self.height < 8 {
            return bad("image must be at least 8x8");
        }
        let f_spans = [
            ("body_semi_x", self.body_semi_x),
            ("body_semi_y", self.body_semi_y),
            ("body_intensity", self.body_intensity),
            ("rim_boost", self.rim_boost),
            ("vein_depth", self.vein_depth),
            ("lesion_radius", self.lesion_radius),
            ("lesion_contrast", self.lesion_contrast),
            ("lesion_depth", self.lesion_depth),
            ("distractor_radius", self.distractor_radius),
            ("mimic_radius", self.mimic_radius),
            ("mimic_contrast", self.mimic_contrast),
            ("distractor_contrast", self.distractor_contrast),
        ];
        for (name, s) in f_spans {
            if !s.is_valid() || !s.min.is_finite() || !s.max.is_finite() {
                return bad(&format!("{name} range is empty"));
            }
        }
        for (name, s) in [
            ("blastic_count", self.blastic_count),
            ("lytic_count", self.lytic_count),
            ("mixed_count", self.mixed_count),
            ("distractor_count", self.distractor_count),
            ("mimic_count", self.mimic_count),
        ] {
            if !s.is_valid() {
                return bad(&format!("{name} range is empty"));
            }
        }
        if self.blastic_count.min == 0 || self.lytic_count.min == 0 || self.mixed_count.min == 0 {
            return bad("malignant samples need at least one lesion");
        }
        if self.lesion_depth.min < 0.0 || self.lesion_depth.max > 1.0 || !(0.0..=1.0).contains(&self.lesion_spread) {
            return bad("lesion seed zone must lie inside the body");
        }
        if self.lesion_radius.min < 1.5 {
            return bad("lesion radius below 1.5 px cannot guarantee 5-pixel instances");
        }
        // blobs sit inside the placement margin, away from the rim peak
        let contrast = self.lesion_contrast.max.max(self.mimic_contrast.max);
        let rim_at_lesions = (-(PLACEMENT_MARGIN as f64 / self.rim_width).powi(2)).exp();
        let hi = (self.body_intensity.max + self.rim_boost.max)
            .max(self.body_intensity.max + self.texture_amplitude + contrast + rim_at_lesions * self.rim_boost.max);
        let lo = self.body_intensity.min - self.vein_depth.max - self.texture_amplitude - contrast;
        if hi > 1.0 || lo < 0.0 || !(0.0..=1.0).contains(&self.background) {
            return bad("contrasts push intensities outside [0,1]");
        }
        if self.noise_sigma < 0.0 || self.edge_softness <= 0.0 || self.max_attempts == 0 {
            return bad("noise, softness and attempts must be positive");
        }
        Ok(())
    }
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self::easy()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSample {
    pub sample_id: String,
    pub label: Label,
    pub phenotype: Phenotype,
    pub image: Image,
    pub body_mask: BinaryMask,
    pub gt_lytic: InstanceLabeling,
    pub gt_blastic: InstanceLabeling,
}

impl PhantomSample {
    /// Ground truth for one phenotype; mixed merges both polarities.
    pub fn ground_truth(&self, phenotype: Phenotype) -> InstanceLabeling {
        match phenotype {
            Phenotype::Lytic => self.gt_lytic.clone(),
            Phenotype::Blastic => self.gt_blastic.clone(),
            Phenotype::Mixed => merge_labelings(&self.gt_lytic, &self.gt_blastic),
            Phenotype::None => InstanceLabeling::empty(self.image.width(), self.image.height()),
        }
    }
}

/// Relabels `b`'s instances after `a`'s. Inputs must be disjoint.
pub fn merge_labelings(a: &InstanceLabeling, b: &InstanceLabeling) -> InstanceLabeling {
    let offset = a.count() as u32;
    let merged = Grid::from_vec(
        a.width(),
        a.height(),
        a.labels()
            .as_slice()
            .iter()
            .zip(b.labels().as_slice())
            .map(|(&la, &lb)| {
                if la != 0 {
                    la
                } else if lb != 0 {
                    lb + offset
                } else {
                    0
                }
            })
            .collect(),
    )
    .expect("same dims");
    InstanceLabeling::from_labels(merged).expect("contiguous by construction")
}

/// Full rendering with the intermediate fields, for invariant checks and
/// ablations that need the lesion-free appearance.
#[derive(Debug, Clone)]
pub struct PhantomRender {
    pub sample: PhantomSample,
    /// Lesion-free image including distractors and the same noise draw.
    pub baseline: Image,
    /// Signed lesion intensity added on top of the baseline (before noise).
    pub lesion_field: RealMap,
}

#[derive(Debug, Clone, Copy)]
struct Disc {
    cx: f64,
    cy: f64,
    r: f64,
}

#[derive(Debug, Clone)]
struct Blob {
    discs: Vec<Disc>,
}

impl Blob {
    /// Soft membership in `[0, 1]`; exactly 0.5 on the disc boundary.
    fn weight(&self, x: f64, y: f64, softness: f64) -> f64 {
        self.discs
            .iter()
            .map(|d| {
                let dist = ((x - d.cx).powi(2) + (y - d.cy).powi(2)).sqrt();
                (0.5 + (d.r - dist) / (2.0 * softness)).clamp(0.0, 1.0)
            })
            .fold(0.0, f64::max)
    }

    fn bounds(&self, pad: f64, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let x0 = self
            .discs
            .iter()
            .map(|d| d.cx - d.r - pad)
            .fold(f64::INFINITY, f64::min);
        let x1 = self
            .discs
            .iter()
            .map(|d| d.cx + d.r + pad)
            .fold(f64::NEG_INFINITY, f64::max);
        let y0 = self
            .discs
            .iter()
            .map(|d| d.cy - d.r - pad)
            .fold(f64::INFINITY, f64::min);
        let y1 = self
            .discs
            .iter()
            .map(|d| d.cy + d.r + pad)
            .fold(f64::NEG_INFINITY, f64::max);
        let clip = |v: f64, n: usize| v.floor().clamp(0.0, n as f64 - 1.0) as usize;
        (clip(x0, w), clip(x1.ceil(), w), clip(y0, h), clip(y1.ceil(), h))
    }

    /// Row-major indices where `inside(x, y)` holds; `None` if the blob leaves the grid.
    fn pixels(&self, pad: f64, w: usize, h: usize, inside: impl Fn(f64, f64) -> bool) -> Option<Vec<usize>> {
        let (x0, x1, y0, y1) = self.bounds(pad, w, h);
        let mut out = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                if inside(x as f64, y as f64) {
                    out.push(y * w + x);
                }
            }
        }
        let touches_edge = |v: usize, n: usize| v == 0 || v == n - 1;
        if out.iter().any(|&i| touches_edge(i % w, w) || touches_edge(i / w, h)) {
            return None;
        }
        Some(out)
    }

    fn core_pixels(&self, w: usize, h: usize) -> Option<Vec<usize>> {
        self.pixels(1.0, w, h, |x, y| {
            self.discs
                .iter()
                .any(|d| (x - d.cx).powi(2) + (y - d.cy).powi(2) <= d.r * d.r)
        })
    }

    /// Pixels with any nonzero soft weight.
    fn support_pixels(&self, w: usize, h: usize, softness: f64) -> Option<Vec<usize>> {
        self.pixels(softness + 1.0, w, h, |x, y| self.weight(x, y, softness) > 0.0)
    }

    fn mask(&self, w: usize, h: usize) -> BinaryMask {
        indices_to_mask(w, h, &self.core_pixels(w, h).unwrap_or_default())
    }
}

fn indices_to_mask(w: usize, h: usize, idx: &[usize]) -> BinaryMask {
    let mut m = BinaryMask::empty(w, h);
    for &i in idx {
        m.set(i % w, i / w, true);
    }
    m
}

struct Body {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    p: f64,
}

impl Body {
    fn normalized(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.ax, (y - self.cy) / self.ay)
    }

    /// Approximate signed distance to the boundary (negative inside).
    fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.normalized(x, y);
        let rho = (u.abs().powf(self.p) + v.abs().powf(self.p)).powf(1.0 / self.p);
        (rho - 1.0) * self.ax.min(self.ay)
    }
}

// Fixed low-rank trabecular texture: (cycles in x, cycles in y, phase).
const TEXTURE_MODES: [(f64, f64, f64); 6] = [
    (3.0, 1.0, 0.3),
    (1.0, 4.0, 1.1),
    (5.0, 3.0, 2.0),
    (2.0, 6.0, 0.7),
    (6.0, 2.0, 2.9),
    (4.0, 5.0, 1.6),
];

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates one phantom from stream 0 of `seed`.
pub fn generate_phantom(seed: u64, cfg: &PhantomConfig, label: Label, phenotype: Phenotype) -> Result<PhantomSample> {
    Ok(render_phantom(seed, 0, format!("phantom-{seed}"), cfg, label, phenotype, None)?.sample)
}

/// Generates one phantom with an explicit lesion count per planted polarity.
pub fn generate_phantom_with_count(
    seed: u64,
    cfg: &PhantomConfig,
    label: Label,
    phenotype: Phenotype,
    lesions_per_polarity: usize,
) -> Result<PhantomSample> {
    let fixed = Span::new(lesions_per_polarity, lesions_per_polarity);
    Ok(render_phantom(seed, 0, format!("phantom-{seed}"), cfg, label, phenotype, Some(fixed))?.sample)
}

pub fn render_phantom(
    seed: u64,
    index: u64,
    sample_id: String,
    cfg: &PhantomConfig,
    label: Label,
    phenotype: Phenotype,
    count_override: Option<Span<usize>>,
) -> Result<PhantomRender> {
    cfg.validate()?;
    if (phenotype == Phenotype::None) != (label == Label::Healthy) {
        return Err(Error::InvalidArgument(format!(
            "phenotype {phenotype} inconsistent with label {label:?}"
        )));
    }
    let mut rng = sample_rng(seed, index);
    let (w, h) = (cfg.width, cfg.height);

    let body = Body {
        cx: (w as f64 - 1.0) / 2.0 + rng.gen_range(-1.0..=1.0) * cfg.center_jitter,
        cy: (h as f64 - 1.0) / 2.0 + rng.gen_range(-1.0..=1.0) * cfg.center_jitter,
        ax: cfg.body_semi_x.sample(&mut rng),
        ay: cfg.body_semi_y.sample(&mut rng),
        p: cfg.body_exponent,
    };
    let level = cfg.body_intensity.sample(&mut rng);
    let rim = cfg.rim_boost.sample(&mut rng);
    let vein = cfg.vein_depth.sample(&mut rng);
    let texture: Vec<f64> = TEXTURE_MODES
        .iter()
        .map(|_| rng.gen_range(-1.0..=1.0) * cfg.texture_amplitude / 2.0)
        .collect();

    let body_mask = BinaryMask::from_fn(w, h, |x, y| body.signed_distance(x as f64, y as f64) <= 0.0);
    // Lesions stay clear of the 2-pixel eroded ROI boundary.
    let placement_roi = erode(&body_mask, PLACEMENT_MARGIN);
    if !placement_roi.any() {
        return Err(Error::PlacementFailure("body too small for lesion placement".into()));
    }

    let mut base = Grid::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let sd = body.signed_distance(xf, yf);
        let bw = 1.0 / (1.0 + (sd / cfg.edge_softness).exp());
        let depth = (-sd).max(0.0);
        let rim_w = (-(depth / cfg.rim_width).powi(2)).exp();
        let (u, v) = body.normalized(xf, yf);
        let tex: f64 = TEXTURE_MODES
            .iter()
            .zip(&texture)
            .map(|(&(fx, fy, ph), &a)| {
                a * (std::f64::consts::TAU * (fx * (u + 1.0) / 2.0 + fy * (v + 1.0) / 2.0) + ph).cos()
            })
            .sum();
        let vein_w = (-((u - 0.62) / 0.14).powi(2) - (v / 0.22).powi(2)).exp();
        cfg.background + bw * (level - cfg.background + rim * rim_w + tex - vein * vein_w)
    });

    // Planted lesions: blastic seeds in u < 0, lytic in u > 0.
    let (n_blastic, n_lytic) = {
        let pick = |span: Span<usize>, rng: &mut ChaCha8Rng| count_override.unwrap_or(span).sample(rng);
        match phenotype {
            Phenotype::None => (0, 0),
            Phenotype::Blastic => (pick(cfg.blastic_count, &mut rng), 0),
            Phenotype::Lytic => (0, pick(cfg.lytic_count, &mut rng)),
            Phenotype::Mixed => (pick(cfg.mixed_count, &mut rng), pick(cfg.mixed_count, &mut rng)),
        }
    };
    let (blastic, lytic, mut occupied) = place_lesions(&mut rng, cfg, &body, &placement_roi, n_blastic, n_lytic)?;

    let n_mimics = cfg.mimic_count.sample(&mut rng);
    for _ in 0..n_mimics {
        let Ok(blob) = place_blob(
            &mut rng,
            cfg,
            &body,
            &placement_roi,
            &occupied,
            MIMIC_ZONE,
            cfg.mimic_radius,
            true,
        ) else {
            continue;
        };
        let support = indices_to_mask(w, h, &blob.support_pixels(w, h, cfg.edge_softness).unwrap_or_default());
        occupied = occupied.union(&dilate(&support, 2))?;
        let contrast = cfg.mimic_contrast.sample(&mut rng);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        add_blob(&mut base, &blob, sign * contrast, cfg.edge_softness);
    }

    let n_distractors = cfg.distractor_count.sample(&mut rng);
    for _ in 0..n_distractors {
        // benign blobs are optional; a crowded body simply gets fewer
        let Ok(blob) = place_blob(
            &mut rng,
            cfg,
            &body,
            &placement_roi,
            &occupied,
            DISTRACTOR_ZONE,
            cfg.distractor_radius,
            false,
        ) else {
            continue;
        };
        let support = indices_to_mask(w, h, &blob.support_pixels(w, h, cfg.edge_softness).unwrap_or_default());
        occupied = occupied.union(&dilate(&support, 1))?;
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let contrast = sign * cfg.distractor_contrast.sample(&mut rng);
        add_blob(&mut base, &blob, contrast, cfg.edge_softness);
    }

    let mut lesion_field = Grid::filled(w, h, 0.0);
    for (blobs, sign) in [(&blastic, 1.0), (&lytic, -1.0)] {
        for blob in blobs.iter() {
            let contrast = sign * cfg.lesion_contrast.sample(&mut rng);
            add_blob(&mut lesion_field, blob, contrast, cfg.edge_softness);
        }
    }

    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("valid sigma");
    let noise_field: Vec<f64> = (0..w * h).map(|_| noise.sample(&mut rng)).collect();

    let with_noise = |field: &[f64]| {
        Image::from_clamped(
            Grid::from_vec(w, h, field.iter().zip(&noise_field).map(|(v, n)| v + n).collect()).expect("dims"),
        )
    };
    let baseline = with_noise(base.as_slice());
    let full: Vec<f64> = base
        .as_slice()
        .iter()
        .zip(lesion_field.as_slice())
        .map(|(b, l)| b + l)
        .collect();
    let image = with_noise(&full);

    let gt_blastic = InstanceLabeling::from_masks(w, h, &blastic.iter().map(|b| b.mask(w, h)).collect::<Vec<_>>())?;
    let gt_lytic = InstanceLabeling::from_masks(w, h, &lytic.iter().map(|b| b.mask(w, h)).collect::<Vec<_>>())?;

    Ok(PhantomRender {
        sample: PhantomSample {
            sample_id,
            label,
            phenotype,
            image,
            body_mask,
            gt_lytic,
            gt_blastic,
        },
        baseline,
        lesion_field,
    })
}

fn add_blob(field: &mut RealMap, blob: &Blob, contrast: f64, softness: f64) {
    let w = field.width();
    let h = field.height();
    for i in blob.support_pixels(w, h, softness).unwrap_or_default() {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        field.as_mut_slice()[i] += contrast * blob.weight(x, y, softness);
    }
}

/// Seed region in normalized body coordinates; `v` is a band in `|v|`.
#[derive(Debug, Clone, Copy)]
struct Zone {
    u: (f64, f64),
    v: (f64, f64),
}

const MIMIC_ZONE: Zone = Zone {
    u: (-0.7, 0.7),
    v: (0.6, 0.7),
};
const DISTRACTOR_ZONE: Zone = Zone {
    u: (-0.8, 0.8),
    v: (0.0, 0.7),
};

fn lesion_zone(cfg: &PhantomConfig, blastic: bool) -> Zone {
    let (a, b) = (cfg.lesion_depth.min, cfg.lesion_depth.max);
    let u = if blastic { (-b, -a) } else { (a, b) };
    Zone {
        u,
        v: (0.0, cfg.lesion_spread),
    }
}

const LAYOUT_RESTARTS: usize = 20;
/// Blobs keep this many pixels of body between them and the boundary.
const PLACEMENT_MARGIN: usize = 3;

type Layout = (Vec<Blob>, Vec<Blob>, BinaryMask);

/// Places all lesions, restarting the whole layout when one cannot fit.
fn place_lesions(
    rng: &mut ChaCha8Rng,
    cfg: &PhantomConfig,
    body: &Body,
    roi: &BinaryMask,
    n_blastic: usize,
    n_lytic: usize,
) -> Result<Layout> {
    let (w, h) = (cfg.width, cfg.height);
    let mut last_err = None;
    'layout: for _ in 0..LAYOUT_RESTARTS {
        let mut occupied = BinaryMask::empty(w, h);
        let mut blastic = Vec::new();
        let mut lytic = Vec::new();
        let plan = [
            (n_blastic, lesion_zone(cfg, true), &mut blastic),
            (n_lytic, lesion_zone(cfg, false), &mut lytic),
        ];
        for (count, zone, out) in plan {
            for _ in 0..count {
                match place_blob(rng, cfg, body, roi, &occupied, zone, cfg.lesion_radius, true) {
                    Ok(blob) => {
                        let support =
                            indices_to_mask(w, h, &blob.support_pixels(w, h, cfg.edge_softness).unwrap_or_default());
                        occupied = occupied.union(&dilate(&support, 2))?;
                        out.push(blob);
                    }
                    Err(e) => {
                        last_err = Some(e);
                        continue 'layout;
                    }
                }
            }
        }
        return Ok((blastic, lytic, occupied));
    }
    Err(last_err.unwrap_or_else(|| Error::PlacementFailure("no layout found".into())))
}

#[allow(clippy::too_many_arguments)]
fn place_blob(
    rng: &mut ChaCha8Rng,
    cfg: &PhantomConfig,
    body: &Body,
    roi: &BinaryMask,
    occupied: &BinaryMask,
    zone: Zone,
    radius: Span<f64>,
    lesion: bool,
) -> Result<Blob> {
    let (w, h) = (cfg.width, cfg.height);
    for _ in 0..cfg.max_attempts {
        let u = rng.gen_range(zone.u.0..=zone.u.1);
        let v = rng.gen_range(zone.v.0..=zone.v.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let r = radius.sample(rng);
        let mut discs = vec![Disc {
            cx: body.cx + u * body.ax,
            cy: body.cy + v * body.ay,
            r,
        }];
        if lesion {
            for _ in 0..rng.gen_range(0..=2) {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let dist = r * rng.gen_range(0.5..=0.9);
                discs.push(Disc {
                    cx: discs[0].cx + dist * angle.cos(),
                    cy: discs[0].cy + dist * angle.sin(),
                    r: r * rng.gen_range(0.6..=0.9),
                });
            }
        }
        let blob = Blob { discs };
        let (Some(core), Some(support)) = (blob.core_pixels(w, h), blob.support_pixels(w, h, cfg.edge_softness)) else {
            continue;
        };
        if core.len() >= 5 && support.iter().all(|&i| roi.bits()[i] && !occupied.bits()[i]) {
            return Ok(blob);
        }
    }
    Err(Error::PlacementFailure(format!(
        "no free site after {} attempts",
        cfg.max_attempts
    )))
}

/// Requested split sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub generative: usize,
    /// Fraction of the generative corpus drawn malignant.
    pub generative_malignant_fraction: f64,
    pub classifier_healthy: usize,
    pub classifier_malignant: usize,
    pub test_blastic: usize,
    pub test_lytic: usize,
    pub test_mixed: usize,
}

impl SplitCounts {
    pub fn test_total(&self) -> usize {
        self.test_blastic + self.test_lytic + self.test_mixed
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.generative < 64 {
            return bad(format!(
                "generative corpus needs >= 64 samples, got {}",
                self.generative
            ));
        }
        if self.classifier_healthy < 16 || self.classifier_malignant < 16 {
            return bad("classifier subset needs >= 16 samples per class".into());
        }
        if self.test_total() < 8 {
            return bad(format!("test set needs >= 8 samples, got {}", self.test_total()));
        }
        if !(0.0..=1.0).contains(&self.generative_malignant_fraction) {
            return bad("generative_malignant_fraction must lie in [0,1]".into());
        }
        Ok(())
    }
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            generative: 400,
            generative_malignant_fraction: 0.5,
            classifier_healthy: 100,
            classifier_malignant: 100,
            test_blastic: 20,
            test_lytic: 20,
            test_mixed: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Generative,
    Classifier,
    Test,
}

impl Split {
    pub fn prefix(self) -> &'static str {
        match self {
            Split::Generative => "gen",
            Split::Classifier => "cls",
            Split::Test => "test",
        }
    }
}

/// One planned sample: where it comes from and what it should contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub split: Split,
    pub index: u64,
    pub sample_id: String,
    pub label: Label,
    pub phenotype: Phenotype,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub generative: Vec<PhantomSample>,
    pub classifier: Vec<PhantomSample>,
    pub test: Vec<PhantomSample>,
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &PhantomSample> {
        self.generative.iter().chain(&self.classifier).chain(&self.test)
    }
}

/// Deterministic sample plan. Stream indices are global across splits, so
/// splits never share a random stream.
pub fn plan_dataset(counts: &SplitCounts) -> Vec<SampleSpec> {
    let mut plan = Vec::new();
    let mut push = |split: Split, local: usize, label: Label, phenotype: Phenotype| {
        let index = plan.len() as u64;
        plan.push(SampleSpec {
            split,
            index,
            sample_id: format!("{}-{:04}", split.prefix(), local),
            label,
            phenotype,
        });
    };

    let n_malignant = (counts.generative as f64 * counts.generative_malignant_fraction).round() as usize;
    for i in 0..counts.generative {
        // spread malignant samples evenly through the corpus
        let malignant = (i + 1) * n_malignant / counts.generative > i * n_malignant / counts.generative;
        if malignant {
            let k = i * n_malignant / counts.generative;
            push(Split::Generative, i, Label::Malignant, Phenotype::MALIGNANT[k % 3]);
        } else {
            push(Split::Generative, i, Label::Healthy, Phenotype::None);
        }
    }
    let mut local = 0;
    for i in 0..counts.classifier_healthy.max(counts.classifier_malignant) {
        if i < counts.classifier_healthy {
            push(Split::Classifier, local, Label::Healthy, Phenotype::None);
            local += 1;
        }
        if i < counts.classifier_malignant {
            push(Split::Classifier, local, Label::Malignant, Phenotype::MALIGNANT[i % 3]);
            local += 1;
        }
    }
    let mut local = 0;
    for (n, ph) in [
        (counts.test_blastic, Phenotype::Blastic),
        (counts.test_lytic, Phenotype::Lytic),
        (counts.test_mixed, Phenotype::Mixed),
    ] {
        for _ in 0..n {
            push(Split::Test, local, Label::Malignant, ph);
            local += 1;
        }
    }
    plan
}

pub fn render_planned(seed: u64, cfg: &PhantomConfig, spec: &SampleSpec) -> Result<PhantomRender> {
    render_phantom(
        seed,
        spec.index,
        spec.sample_id.clone(),
        cfg,
        spec.label,
        spec.phenotype,
        None,
    )
}

pub fn generate_dataset(seed: u64, cfg: &PhantomConfig, counts: &SplitCounts) -> Result<Dataset> {
    cfg.validate()?;
    counts.validate()?;
    let plan = plan_dataset(counts);
    let samples: Vec<(Split, PhantomSample)> = plan
        .par_iter()
        .map(|spec| render_planned(seed, cfg, spec).map(|r| (spec.split, r.sample)))
        .collect::<Result<_>>()?;
    let mut ds = Dataset {
        generative: Vec::new(),
        classifier: Vec::new(),
        test: Vec::new(),
    };
    for (split, s) in samples {
        match split {
            Split::Generative => ds.generative.push(s),
            Split::Classifier => ds.classifier.push(s),
            Split::Test => ds.test.push(s),
        }
    }
    Ok(ds)
}
