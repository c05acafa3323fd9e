//! Instance and global segmentation metrics plus score-ranking utilities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, InstanceLabeling};

/// Many-to-one assignment of predicted instances to reference instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMatching {
    /// Detected references with their (ascending) matched prediction ids.
    pub pairs: Vec<(u32, Vec<u32>)>,
    pub unmatched_refs: Vec<u32>,
    pub unmatched_preds: Vec<u32>,
}

impl InstanceMatching {
    pub fn true_positives(&self) -> usize {
        self.pairs.len()
    }
}

/// `overlap[p][r]` pixel counts, index 0 being background on both axes.
fn overlap_table(pred: &InstanceLabeling, reference: &InstanceLabeling) -> Result<Vec<Vec<u64>>> {
    pred.labels().ensure_same_dims(reference.labels())?;
    let mut table = vec![vec![0u64; reference.count() + 1]; pred.count() + 1];
    for (&p, &r) in pred.labels().as_slice().iter().zip(reference.labels().as_slice()) {
        table[p as usize][r as usize] += 1;
    }
    Ok(table)
}

/// Each prediction goes to the reference with the highest positive Dice;
/// ties go to the lowest reference id.
pub fn match_instances(pred: &InstanceLabeling, reference: &InstanceLabeling) -> Result<InstanceMatching> {
    let table = overlap_table(pred, reference)?;
    let pred_sizes = pred.sizes();
    let ref_sizes = reference.sizes();
    let mut matched: Vec<Vec<u32>> = vec![Vec::new(); reference.count() + 1];
    let mut unmatched_preds = Vec::new();
    for p in 1..=pred.count() {
        let sp = pred_sizes[p] as u64;
        let mut best: Option<(usize, u64)> = None;
        for r in 1..=reference.count() {
            let ov = table[p][r];
            if ov == 0 {
                continue;
            }
            // Dice ov/(sp+sr) compared exactly by cross-multiplication.
            let better = match best {
                None => true,
                Some((br, bov)) => ov * (sp + ref_sizes[br] as u64) > bov * (sp + ref_sizes[r] as u64),
            };
            if better {
                best = Some((r, ov));
            }
        }
        match best {
            Some((r, _)) => matched[r].push(p as u32),
            None => unmatched_preds.push(p as u32),
        }
    }
    let mut pairs = Vec::new();
    let mut unmatched_refs = Vec::new();
    for (r, preds) in matched.into_iter().enumerate().skip(1) {
        if preds.is_empty() {
            unmatched_refs.push(r as u32);
        } else {
            pairs.push((r as u32, preds));
        }
    }
    Ok(InstanceMatching {
        pairs,
        unmatched_refs,
        unmatched_preds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn rate(num: usize, den: usize, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn detection_scores(m: &InstanceMatching) -> DetectionScores {
    let tp = m.true_positives();
    let fp = m.unmatched_preds.len();
    let fn_ = m.unmatched_refs.len();
    let both_empty = tp + fp + fn_ == 0;
    DetectionScores {
        precision: rate(tp, tp + fp, both_empty),
        recall: rate(tp, tp + fn_, both_empty),
        f1: rate(2 * tp, 2 * tp + fp + fn_, both_empty),
    }
}

pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.overlap_count(b)?;
    let total = a.count() + b.count();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

fn union_of(labeling: &InstanceLabeling, ids: &[u32]) -> BinaryMask {
    let bits = labeling.labels().as_slice().iter().map(|l| ids.contains(l)).collect();
    BinaryMask::from_vec(labeling.width(), labeling.height(), bits).expect("dimensions preserved")
}

/// Reference masks paired with the union of their matched predictions.
fn matched_pairs(
    pred: &InstanceLabeling,
    reference: &InstanceLabeling,
    m: &InstanceMatching,
) -> Vec<(BinaryMask, BinaryMask)> {
    m.pairs
        .iter()
        .map(|(r, ps)| (reference.instance_mask(*r), union_of(pred, ps)))
        .collect()
}

/// Mean Dice over detected references; `None` when nothing was detected.
pub fn instance_dice(
    pred: &InstanceLabeling,
    reference: &InstanceLabeling,
    m: &InstanceMatching,
) -> Result<Option<f64>> {
    pred.labels().ensure_same_dims(reference.labels())?;
    let pairs = matched_pairs(pred, reference, m);
    if pairs.is_empty() {
        return Ok(None);
    }
    let sum = pairs.iter().map(|(r, p)| dice(r, p)).sum::<Result<f64>>()?;
    Ok(Some(sum / pairs.len() as f64))
}

/// Set pixels with at least one unset 4-neighbour, the grid border counting
/// as unset.
pub fn surface(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1))
    })
}

const EDT_INF: f64 = 1e20;

/// One-dimensional squared distance transform of sampled function `f`
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the first parabola is dominated.
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest set pixel.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let mut grid: Vec<f64> = mask.bits().iter().map(|&b| if b { 0.0 } else { EDT_INF }).collect();
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut col_out);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        edt_1d(&grid[y * w..(y + 1) * w], &mut row_out);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid
}

fn mean_surface_distance(from: &BinaryMask, to_sdt: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in from.indices() {
        sum += to_sdt[i].sqrt();
        n += 1;
    }
    sum / n as f64
}

/// Average symmetric surface distance in pixels.
pub fn assd(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.grid().ensure_same_dims(b.grid())?;
    let (sa, sb) = (surface(a), surface(b));
    if !sa.any() || !sb.any() {
        return Err(Error::EmptySurface);
    }
    let ab = mean_surface_distance(&sa, &squared_distance_transform(&sb));
    let ba = mean_surface_distance(&sb, &squared_distance_transform(&sa));
    Ok((ab + ba) / 2.0)
}

/// Dice of merged masks and relative volume difference; the latter is
/// `None` when the reference is empty but the prediction is not.
pub fn global_dice_and_rvd(pred: &BinaryMask, reference: &BinaryMask) -> Result<(f64, Option<f64>)> {
    let d = dice(pred, reference)?;
    let (p, r) = (pred.count(), reference.count());
    let rvd = match (p, r) {
        (0, 0) => Some(0.0),
        (_, 0) => None,
        _ => Some((p as f64 - r as f64) / r as f64),
    };
    Ok((d, rvd))
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::len(labels.len(), scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) || labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument(
            "scores must be finite and labels in {0,1}".into(),
        ));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Mann-Whitney rank statistic normalized to [0,1]; ties count one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    // Ascending sweep: each positive beats every negative already passed.
    let mut neg_below = 0u64;
    let mut twice_u = 0u64;
    for group in tie_groups(scores).iter().rev() {
        let gp = group.iter().filter(|&&i| labels[i] == 1).count() as u64;
        let gn = group.len() as u64 - gp;
        twice_u += 2 * gp * neg_below + gp * gn;
        neg_below += gn;
    }
    Ok(twice_u as f64 / 2.0 / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall when predicting positive for `score >= threshold`.
pub fn precision_recall_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<PrPoint> {
    let (pos, _) = check_labels(scores, labels)?;
    let mut tp = 0;
    let mut predicted = 0;
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= threshold {
            predicted += 1;
            tp += l as usize;
        }
    }
    Ok(PrPoint {
        threshold,
        precision: rate(tp, predicted, false),
        recall: rate(tp, pos, false),
    })
}

/// One point per distinct score, thresholds descending.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<PrPoint>> {
    let (pos, _) = check_labels(scores, labels)?;
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut curve = Vec::new();
    for group in tie_groups(scores) {
        predicted += group.len();
        tp += group.iter().filter(|&&i| labels[i] == 1).count();
        curve.push(PrPoint {
            threshold: scores[group[0]],
            precision: rate(tp, predicted, false),
            recall: rate(tp, pos, false),
        });
    }
    Ok(curve)
}

/// Per-sample metric values; `None` marks an undefined metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub detection_precision: f64,
    pub detection_recall: f64,
    pub detection_f1: f64,
    pub instance_dice: Option<f64>,
    pub panoptic_dice: Option<f64>,
    pub assd: Option<f64>,
    pub global_dice: f64,
    pub rvd: Option<f64>,
}

pub const METRIC_NAMES: [&str; 8] = [
    "detection_precision",
    "detection_recall",
    "detection_f1",
    "instance_dice",
    "panoptic_dice",
    "assd",
    "global_dice",
    "rvd",
];

impl SampleMetrics {
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.detection_precision),
            Some(self.detection_recall),
            Some(self.detection_f1),
            self.instance_dice,
            self.panoptic_dice,
            self.assd,
            Some(self.global_dice),
            self.rvd,
        ]
    }
}

/// Full metric suite for one prediction against one reference.
pub fn evaluate_sample(pred: &InstanceLabeling, reference: &InstanceLabeling) -> Result<SampleMetrics> {
    let m = match_instances(pred, reference)?;
    let det = detection_scores(&m);
    let sq = instance_dice(pred, reference, &m)?;
    let panoptic = match sq {
        Some(sq) => Some(det.f1 * sq),
        None if det.f1 == 0.0 => Some(0.0),
        None => None,
    };
    let pairs = matched_pairs(pred, reference, &m);
    let assd_value = if pairs.is_empty() {
        None
    } else {
        let sum = pairs.iter().map(|(r, p)| assd(r, p)).sum::<Result<f64>>()?;
        Some(sum / pairs.len() as f64)
    };
    let (global_dice, rvd) = global_dice_and_rvd(&pred.foreground(), &reference.foreground())?;
    Ok(SampleMetrics {
        detection_precision: det.precision,
        detection_recall: det.recall,
        detection_f1: det.f1,
        instance_dice: sq,
        panoptic_dice: panoptic,
        assd: assd_value,
        global_dice,
        rvd,
    })
}

/// Per-sample metrics tagged with method and phenotype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub method: String,
    pub phenotype: String,
    #[serde(flatten)]
    pub metrics: SampleMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Mean and sample standard deviation of the present values.
pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Summary {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    let n = v.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            sd: f64::NAN,
            n,
        };
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary { mean, sd, n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub phenotype: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Aggregated metrics per method and phenotype, in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub methods: Vec<String>,
    pub phenotypes: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

impl MetricsReport {
    pub fn from_records(records: &[SampleRecord]) -> Self {
        let methods = first_seen(records.iter().map(|r| r.method.as_str()));
        let phenotypes = first_seen(records.iter().map(|r| r.phenotype.as_str()));
        let mut rows = Vec::new();
        for method in &methods {
            for phenotype in &phenotypes {
                let group: Vec<&SampleRecord> = records
                    .iter()
                    .filter(|r| &r.method == method && &r.phenotype == phenotype)
                    .collect();
                if group.is_empty() {
                    continue;
                }
                for (k, metric) in METRIC_NAMES.iter().enumerate() {
                    let s = summarize(group.iter().map(|r| r.metrics.values()[k]));
                    rows.push(SummaryRow {
                        method: method.clone(),
                        phenotype: phenotype.clone(),
                        metric: metric.to_string(),
                        mean: s.mean,
                        sd: s.sd,
                        n: s.n,
                    });
                }
            }
        }
        Self {
            methods,
            phenotypes,
            rows,
        }
    }

    pub fn get(&self, method: &str, phenotype: &str, metric: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.phenotype == phenotype && r.metric == metric)
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{method: {phenotype: {metric: {mean, sd, n}}}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut root: BTreeMap<&str, BTreeMap<&str, BTreeMap<&str, Summary>>> = BTreeMap::new();
        for r in &self.rows {
            root.entry(&r.method)
                .or_default()
                .entry(&r.phenotype)
                .or_default()
                .insert(
                    &r.metric,
                    Summary {
                        mean: r.mean,
                        sd: r.sd,
                        n: r.n,
                    },
                );
        }
        serde_json::to_value(root).expect("plain maps serialize")
    }

    /// One row per phenotype and metric, one `mean ± sd` column per method.
    pub fn write_comparison_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["phenotype".to_string(), "metric".to_string()];
        header.extend(self.methods.iter().cloned());
        w.write_record(&header)?;
        for phenotype in &self.phenotypes {
            for metric in METRIC_NAMES {
                let mut record = vec![phenotype.clone(), metric.to_string()];
                for method in &self.methods {
                    record.push(match self.get(method, phenotype, metric) {
                        Some(r) if r.n > 0 => format!("{:.4} ± {:.4}", r.mean, r.sd),
                        _ => "n/a".to_string(),
                    });
                }
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Grid;

    fn labeling(w: usize, h: usize, labels: &[u32]) -> InstanceLabeling {
        InstanceLabeling::from_labels(Grid::from_vec(w, h, labels.to_vec()).unwrap()).unwrap()
    }

    fn mask(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        BinaryMask::from_fn(w, h, f)
    }

    #[test]
    fn identity_matching() {
        let a = labeling(4, 1, &[0, 1, 1, 0]);
        let m = match_instances(&a, &a).unwrap();
        assert_eq!(m.pairs, vec![(1, vec![1])]);
        assert!(m.unmatched_preds.is_empty() && m.unmatched_refs.is_empty());
        assert_eq!(instance_dice(&a, &a, &m).unwrap(), Some(1.0));
    }

    #[test]
    fn over_segmentation_is_not_penalized() {
        let reference = labeling(6, 1, &[1, 1, 1, 1, 1, 1]);
        let pred = labeling(6, 1, &[1, 1, 0, 0, 2, 2]);
        let m = match_instances(&pred, &reference).unwrap();
        assert_eq!(m.pairs, vec![(1, vec![1, 2])]);
        assert_eq!(
            detection_scores(&m),
            DetectionScores {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
    }

    #[test]
    fn detection_hand_arithmetic() {
        let m = InstanceMatching {
            pairs: (1..=9).map(|r| (r, vec![r])).collect(),
            unmatched_refs: vec![10],
            unmatched_preds: vec![10],
        };
        let d = detection_scores(&m);
        assert!((d.precision - 0.9).abs() < 1e-15 && (d.recall - 0.9).abs() < 1e-15 && (d.f1 - 0.9).abs() < 1e-15);
        let miss = InstanceMatching {
            pairs: vec![],
            unmatched_refs: vec![1],
            unmatched_preds: vec![],
        };
        assert_eq!(
            detection_scores(&miss),
            DetectionScores {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0
            }
        );
    }

    #[test]
    fn partial_cover_dice() {
        let reference = labeling(8, 1, &[1; 8]);
        let pred = labeling(8, 1, &[1, 1, 1, 1, 0, 0, 0, 0]);
        let m = match_instances(&pred, &reference).unwrap();
        let sq = instance_dice(&pred, &reference, &m).unwrap().unwrap();
        assert!((sq - 8.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn assd_cases() {
        let a = mask(8, 4, |x, y| x == 1 && y == 1);
        let b = mask(8, 4, |x, y| x == 4 && y == 1);
        assert_eq!(assd(&a, &b).unwrap(), 3.0);
        assert_eq!(assd(&a, &a).unwrap(), 0.0);
        assert!(matches!(assd(&a, &BinaryMask::empty(8, 4)), Err(Error::EmptySurface)));
    }

    #[test]
    fn global_dice_cases() {
        let a = mask(8, 8, |x, y| x < 2 && y < 2);
        assert_eq!(global_dice_and_rvd(&a, &a).unwrap(), (1.0, Some(0.0)));
        let doubled = mask(8, 8, |x, y| x < 4 && y < 2);
        assert_eq!(global_dice_and_rvd(&doubled, &a).unwrap().1, Some(1.0));
        let disjoint = mask(8, 8, |x, y| x >= 6 && y >= 6);
        assert_eq!(global_dice_and_rvd(&disjoint, &a).unwrap(), (0.0, Some(0.0)));
        let empty = BinaryMask::empty(8, 8);
        assert_eq!(global_dice_and_rvd(&empty, &empty).unwrap(), (1.0, Some(0.0)));
        assert_eq!(global_dice_and_rvd(&a, &empty).unwrap(), (0.0, None));
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(roc_auc(&[0.5; 3], &[1, 1, 1]).is_err());
    }

    #[test]
    fn pr_cases() {
        let curve = pr_curve(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert!(curve.iter().any(|p| p.precision == 1.0 && p.recall == 1.0));
        assert_eq!(curve.len(), 4);
        assert_eq!(precision_recall_at(&[0.9, 0.1], &[1, 0], 2.0).unwrap().recall, 0.0);
    }

    #[test]
    fn panoptic_is_product() {
        let reference = labeling(8, 1, &[1, 1, 0, 0, 2, 2, 0, 0]);
        let pred = labeling(8, 1, &[1, 0, 0, 0, 0, 0, 2, 2]);
        let s = evaluate_sample(&pred, &reference).unwrap();
        assert_eq!(s.panoptic_dice.unwrap(), s.detection_f1 * s.instance_dice.unwrap());
        let empty = InstanceLabeling::empty(8, 1);
        let e = evaluate_sample(&empty, &empty).unwrap();
        assert_eq!((e.detection_f1, e.panoptic_dice), (1.0, None));
        assert_eq!(evaluate_sample(&empty, &reference).unwrap().panoptic_dice, Some(0.0));
    }
}
