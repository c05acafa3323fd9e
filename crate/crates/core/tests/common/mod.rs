//! Brute-force reference implementations shared by the integration tests
//! and the acceptance suite. Each one is written from the definition, with
//! no shared code paths with the library.

#![allow(dead_code)]

use std::collections::VecDeque;

use hideseek::imaging::{BinaryMask, Grid, Image, InstanceLabeling};
use hideseek::pipeline::ExperimentConfig;
use rand::Rng;

pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(density))
}

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |_, _| rng.gen::<f64>()).unwrap()
}

/// Labeling with `k` instances (each pixel drawn uniformly from `0..=k`),
/// redrawn until every label occurs.
pub fn random_labeling(rng: &mut impl Rng, w: usize, h: usize, k: u32, fill: f64) -> InstanceLabeling {
    loop {
        let labels: Vec<u32> = (0..w * h)
            .map(|_| {
                if k > 0 && rng.gen_bool(fill) {
                    rng.gen_range(1..=k)
                } else {
                    0
                }
            })
            .collect();
        if (1..=k).all(|l| labels.contains(&l)) {
            return InstanceLabeling::from_labels(Grid::from_vec(w, h, labels).unwrap()).unwrap();
        }
    }
}

/// BFS labeling; labels follow the raster order of each component's first pixel.
pub fn flood_fill(mask: &BinaryMask, eight: bool) -> Vec<u32> {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut next = 0;
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits()[j] && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    labels
}

/// Erosion or dilation by direct 3x3 neighbourhood inspection; outside is unset.
pub fn morph_oracle(mask: &BinaryMask, dilate: bool, iterations: usize) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut cur: Vec<bool> = mask.bits().to_vec();
    for _ in 0..iterations {
        let mut next = vec![false; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let neighbours: Vec<bool> = (-1..=1)
                    .flat_map(|dy| (-1..=1).map(move |dx| (x + dx, y + dy)))
                    .map(|(nx, ny)| {
                        nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize && cur[ny as usize * w + nx as usize]
                    })
                    .collect();
                next[y as usize * w + x as usize] = if dilate {
                    neighbours.iter().any(|&b| b)
                } else {
                    neighbours.iter().all(|&b| b)
                };
            }
        }
        cur = next;
    }
    BinaryMask::from_vec(w, h, cur).unwrap()
}

/// Exhaustive single-threshold Otsu over the 256 bin cut points, with
/// pixels represented by their bin centres and the lowest cut winning ties.
pub fn otsu_exhaustive(img: &Image, roi: &BinaryMask) -> f64 {
    let values: Vec<f64> = img
        .pixels()
        .iter()
        .zip(roi.bits())
        .filter(|(_, &r)| r)
        .map(|(&v, _)| v)
        .collect();
    let bin = |v: f64| ((v * 256.0).floor() as usize).min(255);
    let center = |k: usize| (k as f64 + 0.5) / 256.0;
    let n = values.len() as f64;
    let mu: f64 = values.iter().map(|&v| center(bin(v))).sum::<f64>() / n;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 1..256 {
        let mut score = 0.0;
        for class in [
            values.iter().filter(|&&v| bin(v) < k).collect::<Vec<_>>(),
            values.iter().filter(|&&v| bin(v) >= k).collect::<Vec<_>>(),
        ] {
            if class.is_empty() {
                continue;
            }
            let m = class.iter().map(|&&v| center(bin(v))).sum::<f64>() / class.len() as f64;
            score += class.len() as f64 / n * (m - mu).powi(2);
        }
        if score > best.0 {
            best = (score, k);
        }
    }
    best.1 as f64 / 256.0
}

/// Surface pixels: set pixels with an unset 4-neighbour or on the border.
pub fn surface_pixels(mask: &BinaryMask) -> Vec<(i64, i64)> {
    let (w, h) = mask.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0 || y == 0 || x == w - 1 || y == h - 1;
            if edge || !mask.get(x - 1, y) || !mask.get(x + 1, y) || !mask.get(x, y - 1) || !mask.get(x, y + 1) {
                out.push((x as i64, y as i64));
            }
        }
    }
    out
}

fn directed_mean(from: &[(i64, i64)], to: &[(i64, i64)]) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|&(x, y)| {
            let d2 = to.iter().map(|&(u, v)| (x - u).pow(2) + (y - v).pow(2)).min().unwrap();
            (d2 as f64).sqrt()
        })
        .sum();
    sum / from.len() as f64
}

/// All-pairs average symmetric surface distance (mean of both directions).
pub fn assd_bruteforce(a: &BinaryMask, b: &BinaryMask) -> Option<f64> {
    let (sa, sb) = (surface_pixels(a), surface_pixels(b));
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    Some((directed_mean(&sa, &sb) + directed_mean(&sb, &sa)) / 2.0)
}

/// Dice as an exact fraction `(2|A∩B|, |A|+|B|)`.
fn dice_fraction(a: &[u32], la: u32, b: &[u32], lb: u32) -> (u64, u64) {
    let sa = a.iter().filter(|&&v| v == la).count() as u64;
    let sb = b.iter().filter(|&&v| v == lb).count() as u64;
    let inter = a.iter().zip(b).filter(|(&x, &y)| x == la && y == lb).count() as u64;
    (2 * inter, sa + sb)
}

/// Best reference for every prediction by enumerating every assignment of
/// predictions to references (or none). Maximizes the summed Dice over
/// positive-overlap assignments; ties go to the lexicographically smallest
/// assignment vector. Index `p - 1` holds prediction `p`'s reference.
pub fn exhaustive_matching(pred: &InstanceLabeling, reference: &InstanceLabeling) -> Vec<Option<u32>> {
    let (pl, rl) = (pred.labels().as_slice(), reference.labels().as_slice());
    let (np, nr) = (pred.count(), reference.count());
    let options = nr as u64 + 1;
    let mut best: Option<(f64, Vec<Option<u32>>)> = None;
    for code in 0..options.pow(np as u32) {
        let mut c = code;
        let mut assignment = Vec::with_capacity(np);
        let mut total = 0.0;
        let mut feasible = true;
        for p in 1..=np as u32 {
            let choice = (c % options) as u32;
            c /= options;
            if choice == 0 {
                assignment.push(None);
                continue;
            }
            let (num, den) = dice_fraction(pl, p, rl, choice);
            if num == 0 {
                feasible = false;
                break;
            }
            total += num as f64 / den as f64;
            assignment.push(Some(choice));
        }
        if !feasible {
            continue;
        }
        let key = |a: &[Option<u32>]| a.iter().map(|o| o.unwrap_or(u32::MAX)).collect::<Vec<_>>();
        let better = match &best {
            None => true,
            Some((bt, ba)) => total > *bt || (total == *bt && key(&assignment) < key(ba)),
        };
        if better {
            best = Some((total, assignment));
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| vec![None; np])
}

/// Mann-Whitney pair counting: ties count one half.
pub fn auc_pair_count(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / 2.0 / (pos as f64 * neg as f64)
}

/// Mean SSIM evaluated window by window from the definition.
pub fn ssim_direct(a: &Image, b: &Image, win: usize) -> f64 {
    let (w, h) = a.dims();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let px: Vec<(f64, f64)> = (y0..y0 + win)
                .flat_map(|y| (x0..x0 + win).map(move |x| (x, y)))
                .map(|(x, y)| (a.get(x, y), b.get(x, y)))
                .collect();
            let ma = px.iter().map(|p| p.0).sum::<f64>() / n;
            let mb = px.iter().map(|p| p.1).sum::<f64>() / n;
            let va = px.iter().map(|p| (p.0 - ma).powi(2)).sum::<f64>() / n;
            let vb = px.iter().map(|p| (p.1 - mb).powi(2)).sum::<f64>() / n;
            let cov = px.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / n;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Small but complete experiment for tests that need the full pipeline.
pub fn tiny_config(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.splits.generative = 64;
    cfg.splits.classifier_healthy = 16;
    cfg.splits.classifier_malignant = 16;
    cfg.splits.test_blastic = 4;
    cfg.splits.test_lytic = 3;
    cfg.splits.test_mixed = 2;
    cfg.ablation.projection_samples = 4;
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// Every CSV under `root`, keyed by relative path.
pub fn csv_files(root: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(dir: &std::path::Path, root: &std::path::Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(root, root, &mut out);
    out
}
