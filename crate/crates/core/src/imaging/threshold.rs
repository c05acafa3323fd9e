use super::{BinaryMask, Grid, Image, RealMap};
use crate::error::{Error, Result};

/// Number of uniform histogram bins over `[0, 1]` used by Otsu.
pub const OTSU_BINS: usize = 256;

/// Sets every ROI pixel whose value is strictly above the ROI mean.
///
/// Accepts any real map so residuals can be binarized with the same code.
pub fn mean_threshold(values: &RealMap, roi: &BinaryMask) -> Result<BinaryMask> {
    values.ensure_same_dims(roi.grid())?;
    let n = roi.count();
    if n == 0 {
        return Err(Error::EmptyRoi);
    }
    let sum: f64 = roi.indices().map(|i| values.as_slice()[i]).sum();
    let mean = sum / n as f64;
    let bits = values
        .as_slice()
        .iter()
        .zip(roi.bits())
        .map(|(&v, &r)| r && v > mean)
        .collect();
    BinaryMask::from_vec(values.width(), values.height(), bits)
}

#[inline]
pub(crate) fn otsu_bin(v: f64) -> usize {
    ((v * OTSU_BINS as f64).floor() as usize).min(OTSU_BINS - 1)
}

/// Multi-level Otsu over the ROI histogram (256 bins on `[0, 1]`).
///
/// Returns `levels` ascending thresholds. A threshold `t = k / 256` separates
/// bins `< k` from bins `>= k`, so "below" means `value < t`. Ties between
/// cut sets resolve to the lexicographically lowest cut.
pub fn otsu_thresholds(img: &Image, roi: &BinaryMask, levels: usize) -> Result<Vec<f64>> {
    img.grid().ensure_same_dims(roi.grid())?;
    if !(1..=2).contains(&levels) {
        return Err(Error::InvalidArgument(format!(
            "otsu levels must be 1 or 2, got {levels}"
        )));
    }
    if !roi.any() {
        return Err(Error::EmptyRoi);
    }
    let hist = roi_histogram(img.grid(), roi);
    if hist.iter().filter(|&&c| c > 0.0).count() < 2 {
        return Err(Error::DegenerateHistogram);
    }

    let total: f64 = hist.iter().sum();
    // Prefix sums of weight and first moment; P[k] covers bins < k.
    let mut p = vec![0.0; OTSU_BINS + 1];
    let mut s = vec![0.0; OTSU_BINS + 1];
    for k in 0..OTSU_BINS {
        p[k + 1] = p[k] + hist[k];
        s[k + 1] = s[k] + hist[k] * bin_center(k);
    }
    let mu_total = s[OTSU_BINS] / total;
    let class_term = |lo: usize, hi: usize| -> f64 {
        let w = p[hi] - p[lo];
        if w <= 0.0 {
            return 0.0;
        }
        let mu = (s[hi] - s[lo]) / w;
        w / total * (mu - mu_total).powi(2)
    };

    let cuts = if levels == 1 {
        let mut best = (f64::NEG_INFINITY, 1);
        for k in 1..OTSU_BINS {
            let v = class_term(0, k) + class_term(k, OTSU_BINS);
            if v > best.0 {
                best = (v, k);
            }
        }
        vec![best.1]
    } else {
        let mut best = (f64::NEG_INFINITY, 1, 2);
        for k1 in 1..OTSU_BINS - 1 {
            let head = class_term(0, k1);
            for k2 in k1 + 1..OTSU_BINS {
                let v = head + class_term(k1, k2) + class_term(k2, OTSU_BINS);
                if v > best.0 {
                    best = (v, k1, k2);
                }
            }
        }
        vec![best.1, best.2]
    };
    Ok(cuts.into_iter().map(|k| k as f64 / OTSU_BINS as f64).collect())
}

fn roi_histogram(values: &Grid<f64>, roi: &BinaryMask) -> Vec<f64> {
    let mut hist = vec![0.0; OTSU_BINS];
    for i in roi.indices() {
        hist[otsu_bin(values.as_slice()[i])] += 1.0;
    }
    hist
}

#[inline]
pub(crate) fn bin_center(k: usize) -> f64 {
    (k as f64 + 0.5) / OTSU_BINS as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, v: Vec<f64>) -> RealMap {
        Grid::from_vec(w, h, v).unwrap()
    }

    #[test]
    fn constant_image_sets_nothing() {
        let img = Grid::filled(8, 8, 0.5);
        let m = mean_threshold(&img, &BinaryMask::full(8, 8)).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn two_by_two_split_at_mean() {
        let img = map(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        let m = mean_threshold(&img, &BinaryMask::full(2, 2)).unwrap();
        assert_eq!(m.bits(), &[false, false, true, true]);
    }

    #[test]
    fn block_on_background() {
        // mean = (4 * 0.9 + 60 * 0.1) / 64 = 0.15
        let img = Grid::from_fn(8, 8, |x, y| {
            if (3..5).contains(&x) && (2..4).contains(&y) {
                0.9
            } else {
                0.1
            }
        });
        let m = mean_threshold(&img, &BinaryMask::full(8, 8)).unwrap();
        let expected = BinaryMask::from_fn(8, 8, |x, y| (3..5).contains(&x) && (2..4).contains(&y));
        assert_eq!(m, expected);
    }

    #[test]
    fn mean_threshold_errors() {
        let img = Grid::filled(8, 8, 0.5);
        assert!(matches!(
            mean_threshold(&img, &BinaryMask::empty(8, 8)),
            Err(Error::EmptyRoi)
        ));
        assert!(matches!(
            mean_threshold(&img, &BinaryMask::full(4, 8)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn otsu_bimodal() {
        let img = Image::from_fn(16, 16, |x, _| if x < 8 { 0.2 } else { 0.8 }).unwrap();
        let t = otsu_thresholds(&img, &BinaryMask::full(16, 16), 1).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t[0] > 0.2 && t[0] < 0.8, "{t:?}");
    }

    #[test]
    fn otsu_trimodal() {
        let img = Image::from_fn(12, 12, |x, _| [0.1, 0.5, 0.9][x / 4]).unwrap();
        let t = otsu_thresholds(&img, &BinaryMask::full(12, 12), 2).unwrap();
        assert!(t[0] > 0.1 && t[0] < 0.5, "{t:?}");
        assert!(t[1] > 0.5 && t[1] < 0.9, "{t:?}");
    }

    #[test]
    fn otsu_degenerate() {
        let img = Image::constant(8, 8, 0.3).unwrap();
        assert!(matches!(
            otsu_thresholds(&img, &BinaryMask::full(8, 8), 1),
            Err(Error::DegenerateHistogram)
        ));
        assert!(matches!(
            otsu_thresholds(&img, &BinaryMask::empty(8, 8), 1),
            Err(Error::EmptyRoi)
        ));
    }
}
