//! Brute-force reference implementations shared by the integration tests.
//!
//! These are written against plain slices and index arithmetic and never
//! call into the library's numeric code.

#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Normalize both vectors first, then take the dot product.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    let mut d = 0.0;
    for i in 0..a.len() {
        d += (a[i] / na) * (b[i] / nb);
    }
    d.clamp(-1.0, 1.0)
}

/// `pixels` is H*W*C row-major.
pub fn pool(pixels: &[f64], hw: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for p in 0..hw {
            s += pixels[p * c + ch];
        }
        out[ch] = s / hw as f64;
    }
    out
}

pub fn simmap(pixels: &[f64], hw: usize, c: usize, e: &[f64]) -> Vec<f64> {
    (0..hw).map(|p| cosine(&pixels[p * c..(p + 1) * c], e)).collect()
}

pub fn score_image(pixels: &[f64], hw: usize, c: usize, e: &[f64]) -> f64 {
    cosine(&pool(pixels, hw, c), e)
}

pub fn score_pixel(pixels: &[f64], hw: usize, c: usize, e: &[f64]) -> f64 {
    let m = simmap(pixels, hw, c, e);
    let mut best = m[0];
    for v in m {
        if v > best {
            best = v;
        }
    }
    best
}

pub fn score_seg(pixels: &[f64], hw: usize, c: usize, tags: &[Vec<f64>]) -> Vec<f64> {
    let maps: Vec<Vec<f64>> = tags.iter().map(|t| simmap(pixels, hw, c, t)).collect();
    let mut counts = vec![0.0; tags.len()];
    for p in 0..hw {
        let mut best = 0;
        for k in 0..tags.len() {
            if maps[k][p] > maps[best][p] {
                best = k;
            }
        }
        counts[best] += 1.0;
    }
    counts.iter().map(|n| n / hw as f64).collect()
}

/// Insertion sort on indices, descending, stable.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = Vec::new();
    for i in 0..scores.len() {
        let mut pos = idx.len();
        while pos > 0 && scores[idx[pos - 1]] < scores[i] {
            pos -= 1;
        }
        idx.insert(pos, i);
    }
    idx
}

/// Indices of the tags kept by the largest-gap rule, in descending order.
pub fn gap_select(scores: &[f64]) -> Vec<usize> {
    let order = descending_order(scores);
    let mut best_k = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 0..order.len().saturating_sub(1) {
        let g = scores[order[k]] - scores[order[k + 1]];
        if g > best_gap {
            best_gap = g;
            best_k = k;
        }
    }
    order[..=best_k].to_vec()
}

pub fn threshold_select(scores: &[f64], t: f64) -> Vec<usize> {
    descending_order(scores)
        .into_iter()
        .filter(|&i| scores[i] > t)
        .collect()
}

pub fn prune(values: &[f64]) -> Vec<usize> {
    let n = values.len() as f64;
    let mut mean = 0.0;
    for v in values {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in values {
        var += (v - mean) * (v - mean);
    }
    let cut = mean + (var / n).sqrt();
    (0..values.len()).filter(|&i| values[i] > cut).collect()
}

pub fn minmax(v: &[f64]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if hi - lo < 1e-12 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

pub fn union(maps: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        if maps.is_empty() {
            continue;
        }
        let mut m = maps[0][i];
        for map in maps {
            if map[i] > m {
                m = map[i];
            }
        }
        *o = m;
    }
    out
}

/// Precision at each positive with pessimistic ties, via explicit ranks.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<usize> = (0..scores.len()).filter(|&i| positive[i]).collect();
    if pos.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &i in &pos {
        let rank = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).count();
        let hits = pos.iter().filter(|&&j| scores[j] >= scores[i]).count();
        total += hits as f64 / rank as f64;
    }
    Some(total / pos.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub map: f64,
}

/// Set-based micro metrics. Each sample: candidates, predicted, truth, scores.
pub fn tag_metrics(samples: &[(Vec<String>, Vec<String>, Vec<String>, Vec<f64>)]) -> TagMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    let mut aps = Vec::new();
    for (cands, pred, truth, scores) in samples {
        let p: HashSet<&String> = pred.iter().collect();
        let t: HashSet<&String> = truth.iter().collect();
        tp += p.intersection(&t).count();
        fp += p.difference(&t).count();
        fn_ += t.difference(&p).count();
        tn += cands.iter().filter(|c| !p.contains(c) && !t.contains(c)).count();
        let positive: Vec<bool> = cands.iter().map(|c| t.contains(c)).collect();
        if let Some(ap) = average_precision(scores, &positive) {
            aps.push(ap);
        }
    }
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fn_);
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    TagMetrics {
        precision,
        recall,
        f1,
        accuracy: div(tp + tn, tp + tn + fp + fn_),
        map: if aps.is_empty() {
            0.0
        } else {
            aps.iter().sum::<f64>() / aps.len() as f64
        },
    }
}

/// (iou, fpr, fnr) over index sets.
pub fn mask_stats(pred: &[u8], gt: &[u8]) -> (f64, f64, f64) {
    let p: HashSet<usize> = (0..pred.len()).filter(|&i| pred[i] == 1).collect();
    let g: HashSet<usize> = (0..gt.len()).filter(|&i| gt[i] == 1).collect();
    let all: HashSet<usize> = (0..pred.len()).collect();
    let inter = p.intersection(&g).count();
    let uni = p.union(&g).count();
    let neg: HashSet<usize> = all.difference(&g).copied().collect();
    let fp = p.intersection(&neg).count();
    let fn_ = g.difference(&p).count();
    (
        if uni == 0 { 1.0 } else { inter as f64 / uni as f64 },
        if neg.is_empty() {
            0.0
        } else {
            fp as f64 / neg.len() as f64
        },
        if g.is_empty() { 0.0 } else { fn_ as f64 / g.len() as f64 },
    )
}

/// Tag-level mIoU: `samples` hold (tag maps, gt masks by tag), maps flat.
pub fn tag_miou(samples: &[(Vec<(String, Vec<f64>)>, BTreeMap<String, Vec<u8>>)], bg: f64) -> f64 {
    let mut inter: BTreeMap<String, usize> = BTreeMap::new();
    let mut uni: BTreeMap<String, usize> = BTreeMap::new();
    let mut present: HashSet<String> = HashSet::new();
    for (maps, gt) in samples {
        let n = maps[0].1.len();
        let mut label: Vec<Option<String>> = Vec::new();
        for p in 0..n {
            let mut best = 0;
            for k in 0..maps.len() {
                if maps[k].1[p] > maps[best].1[p] {
                    best = k;
                }
            }
            label.push(if maps[best].1[p] > bg {
                Some(maps[best].0.clone())
            } else {
                None
            });
        }
        let mut classes: HashSet<String> = maps.iter().map(|(t, _)| t.clone()).collect();
        classes.extend(gt.keys().cloned());
        for (t, m) in gt {
            if m.contains(&1) {
                present.insert(t.clone());
            }
        }
        for cl in classes {
            let pred: HashSet<usize> = (0..n).filter(|&p| label[p].as_deref() == Some(cl.as_str())).collect();
            let g: HashSet<usize> = gt
                .get(&cl)
                .map(|m| (0..n).filter(|&p| m[p] == 1).collect())
                .unwrap_or_default();
            *inter.entry(cl.clone()).or_default() += pred.intersection(&g).count();
            *uni.entry(cl).or_default() += pred.union(&g).count();
        }
    }
    if present.is_empty() {
        return 0.0;
    }
    let mut s = 0.0;
    for cl in &present {
        s += if uni[cl] == 0 {
            0.0
        } else {
            inter[cl] as f64 / uni[cl] as f64
        };
    }
    s / present.len() as f64
}
