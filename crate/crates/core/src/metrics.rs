//! Tag-selection and segmentation metrics.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::maps::ScalarMap;
use crate::scoring::TagScores;
use crate::tensor_io::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Fractions in [0, 1]; [`TagEvalReport::to_json`] renders percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagEvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub map: f64,
    pub counts: Counts,
}

/// Percentage with one decimal, as a JSON number.
fn pct(v: f64) -> serde_json::Value {
    let s = format!("{:.1}", 100.0 * v);
    serde_json::Value::Number(serde_json::Number::from_f64(s.parse().unwrap()).unwrap())
}

impl TagEvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "precision": pct(self.precision),
            "recall": pct(self.recall),
            "f1": pct(self.f1),
            "accuracy": pct(self.accuracy),
            "map": pct(self.map),
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "tn": self.counts.tn,
            "fn": self.counts.fn_,
        })
    }
}

/// Average precision of one ranked sample.
///
/// For each positive, precision is measured at the rank of the last item
/// scoring at least as high (ties resolve pessimistically). Returns `None`
/// when the sample has no positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut sum = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        let mut above = 0usize;
        let mut above_pos = 0usize;
        for (j, &t) in scores.iter().enumerate() {
            if t >= s {
                above += 1;
                above_pos += usize::from(positive[j]);
            }
        }
        sum += above_pos as f64 / above as f64;
    }
    Some(sum / n_pos as f64)
}

/// Micro-averaged selection metrics plus sample-wise mAP.
///
/// Candidates of each sample are the entries of its `scores`.
pub fn eval_tags(predictions: &[Vec<String>], truths: &[Vec<String>], scores: &[TagScores]) -> Result<TagEvalReport> {
    if predictions.len() != truths.len() || truths.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} truths and {} score lists",
            predictions.len(),
            truths.len(),
            scores.len()
        )));
    }
    let mut counts = Counts::default();
    let mut ap_sum = 0.0;
    let mut ap_n = 0usize;
    for (k, ((pred, truth), sc)) in predictions.iter().zip(truths).zip(scores).enumerate() {
        let is_candidate = |t: &String| sc.entries.iter().any(|(c, _)| c == t);
        if let Some(t) = pred.iter().find(|t| !is_candidate(t)) {
            return Err(Error::Contract(format!(
                "sample {k}: predicted tag {t:?} is not a candidate"
            )));
        }
        if let Some(t) = truth.iter().find(|t| !is_candidate(t)) {
            return Err(Error::Contract(format!(
                "sample {k}: true tag {t:?} is not a candidate"
            )));
        }
        let mut positive = Vec::with_capacity(sc.len());
        for (tag, _) in &sc.entries {
            let p = pred.contains(tag);
            let t = truth.contains(tag);
            positive.push(t);
            match (p, t) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => counts.tn += 1,
            }
        }
        if let Some(ap) = average_precision(&sc.scores(), &positive) {
            ap_sum += ap;
            ap_n += 1;
        }
    }
    let (precision, recall) = (counts.precision(), counts.recall());
    Ok(TagEvalReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        accuracy: counts.accuracy(),
        map: if ap_n == 0 { 0.0 } else { ap_sum / ap_n as f64 },
        counts,
    })
}

/// Foreground where the value is strictly above `threshold`.
pub fn binarize(map: &ScalarMap, threshold: f64) -> BinaryMask {
    BinaryMask::new(
        map.height(),
        map.width(),
        map.values().iter().map(|&v| u8::from(v > threshold)).collect(),
    )
    .expect("shape carried over from map")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegEvalReport {
    pub caption_iou: f64,
    pub mfpr: f64,
    pub mfnr: f64,
}

impl SegEvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "caption_iou": pct(self.caption_iou),
            "mfpr": pct(self.mfpr),
            "mfnr": pct(self.mfnr),
        })
    }
}

/// Per-pair foreground statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskStats {
    pub iou: f64,
    pub fpr: f64,
    pub fnr: f64,
}

fn check_same_shape(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "mask {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// IoU (1 when both empty), FPR (0 without negatives), FNR (0 without positives).
pub fn mask_stats(pred: &BinaryMask, gt: &BinaryMask) -> Result<MaskStats> {
    check_same_shape(pred, gt)?;
    let mut c = Counts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == 1, g == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let union = c.tp + c.fp + c.fn_;
    Ok(MaskStats {
        iou: if union == 0 { 1.0 } else { c.tp as f64 / union as f64 },
        fpr: ratio(c.fp, c.fp + c.tn),
        fnr: ratio(c.fn_, c.fn_ + c.tp),
    })
}

/// Means of per-sample IoU, FPR and FNR. Empty input gives all zeros.
pub fn eval_text_seg(pred_masks: &[BinaryMask], gt_masks: &[BinaryMask]) -> Result<SegEvalReport> {
    if pred_masks.len() != gt_masks.len() {
        return Err(Error::Shape(format!(
            "{} predicted masks for {} ground-truth masks",
            pred_masks.len(),
            gt_masks.len()
        )));
    }
    let stats = pred_masks
        .iter()
        .zip(gt_masks)
        .map(|(p, g)| mask_stats(p, g))
        .collect::<Result<Vec<_>>>()?;
    let n = stats.len().max(1) as f64;
    Ok(SegEvalReport {
        caption_iou: stats.iter().map(|s| s.iou).sum::<f64>() / n,
        mfpr: stats.iter().map(|s| s.fpr).sum::<f64>() / n,
        mfnr: stats.iter().map(|s| s.fnr).sum::<f64>() / n,
    })
}

/// One sample for tag-level segmentation: per-tag maps plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TagSegSample {
    pub maps: Vec<(String, ScalarMap)>,
    /// Tags absent here have an empty ground-truth mask in this sample.
    pub gt: BTreeMap<String, BinaryMask>,
}

/// Pixel labels: index into `maps`, or `None` for background.
pub fn assign_pixels(maps: &[(String, ScalarMap)], background_threshold: f64) -> Result<Vec<Option<usize>>> {
    let Some((_, first)) = maps.first() else {
        return Ok(Vec::new());
    };
    let shape = first.shape();
    if let Some((t, m)) = maps.iter().find(|(_, m)| m.shape() != shape) {
        return Err(Error::Shape(format!(
            "map of tag {t:?} is {}x{}, expected {}x{}",
            m.height(),
            m.width(),
            shape.0,
            shape.1
        )));
    }
    Ok((0..first.len())
        .map(|i| {
            let mut best = 0;
            for k in 1..maps.len() {
                if maps[k].1.values()[i] > maps[best].1.values()[i] {
                    best = k;
                }
            }
            (maps[best].1.values()[i] > background_threshold).then_some(best)
        })
        .collect())
}

/// Per-class IoU accumulated over all samples, averaged over classes that
/// appear in some ground-truth mask.
pub fn eval_tag_seg(samples: &[TagSegSample], background_threshold: f64) -> Result<f64> {
    let mut acc: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut present = BTreeSet::new();
    for s in samples {
        let labels = assign_pixels(&s.maps, background_threshold)?;
        let shape = match (s.maps.first(), s.gt.values().next()) {
            (Some((_, m)), _) => m.shape(),
            (None, Some(g)) => (g.height(), g.width()),
            (None, None) => continue,
        };
        for (tag, g) in &s.gt {
            if (g.height(), g.width()) != shape {
                return Err(Error::Shape(format!(
                    "ground truth of {tag:?} is {}x{}, maps are {}x{}",
                    g.height(),
                    g.width(),
                    shape.0,
                    shape.1
                )));
            }
            if g.count() > 0 {
                present.insert(tag.as_str());
            }
        }
        let classes: BTreeSet<&str> = s
            .maps
            .iter()
            .map(|(t, _)| t.as_str())
            .chain(s.gt.keys().map(String::as_str))
            .collect();
        for class in classes {
            let gt = s.gt.get(class);
            let entry = acc.entry(class).or_default();
            for px in 0..shape.0 * shape.1 {
                let p = labels.get(px).copied().flatten().is_some_and(|k| s.maps[k].0 == class);
                let g = gt.is_some_and(|m| m.data()[px] == 1);
                entry.0 += usize::from(p && g);
                entry.1 += usize::from(p || g);
            }
        }
    }
    if present.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = present.iter().map(|c| ratio(acc[c].0, acc[c].1)).sum();
    Ok(total / present.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreMethod;

    fn ts(entries: &[(&str, f64)]) -> TagScores {
        TagScores::new(
            ScoreMethod::Pixel,
            entries.iter().map(|(t, s)| (t.to_string(), *s)).collect(),
        )
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn f1_from_reported_precision_recall() {
        assert_eq!(format!("{:.1}", 100.0 * f1_score(0.925, 0.286)), "43.7");
        assert_eq!(format!("{:.1}", 100.0 * f1_score(0.829, 0.745)), "78.5");
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn ap_by_hand() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[0.5], &[false]), None);
        // a tie between a positive and a negative counts at the worse rank
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]), Some(0.5));
    }

    #[test]
    fn perfect_predictor() {
        let sc = vec![ts(&[("a", 0.9), ("b", 0.2), ("c", 0.7)])];
        let r = eval_tags(&[strings(&["a", "c"])], &[strings(&["a", "c"])], &sc).unwrap();
        assert_eq!(
            (r.precision, r.recall, r.f1, r.accuracy, r.map),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(r.to_json()["precision"], serde_json::json!(100.0));
    }

    #[test]
    fn unknown_prediction_rejected() {
        let sc = vec![ts(&[("a", 0.9)])];
        assert!(matches!(
            eval_tags(&[strings(&["zz"])], &[strings(&["a"])], &sc),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn binarize_strict() {
        let m = ScalarMap::new(1, 3, vec![0.3, 0.45, 0.6]).unwrap();
        assert_eq!(binarize(&m, 0.4).data(), &[0, 1, 1]);
        assert_eq!(binarize(&m, 0.6).data(), &[0, 0, 0]);
        assert_eq!(binarize(&ScalarMap::zeros(2, 2), 0.5).count(), 0);
    }

    #[test]
    fn text_seg_three_by_three() {
        let pred = BinaryMask::from_fn(3, 3, |_, w| w < 2);
        let gt = BinaryMask::from_fn(3, 3, |h, _| h < 2);
        let r = eval_text_seg(&[pred], &[gt]).unwrap();
        assert!((r.caption_iou - 0.5).abs() < 1e-12);
        assert!((r.mfpr - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.mfnr - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn text_seg_degenerate() {
        let gt = BinaryMask::from_fn(2, 2, |h, w| h == w);
        let same = eval_text_seg(std::slice::from_ref(&gt), std::slice::from_ref(&gt)).unwrap();
        assert_eq!((same.caption_iou, same.mfpr, same.mfnr), (1.0, 0.0, 0.0));
        let empty = eval_text_seg(&[BinaryMask::zeros(2, 2)], &[gt]).unwrap();
        assert_eq!((empty.caption_iou, empty.mfpr, empty.mfnr), (0.0, 0.0, 1.0));
        let none = mask_stats(&BinaryMask::zeros(2, 2), &BinaryMask::zeros(2, 2)).unwrap();
        assert_eq!(none.iou, 1.0);
        assert!(eval_text_seg(&[BinaryMask::zeros(2, 2)], &[BinaryMask::zeros(3, 2)]).is_err());
    }

    #[test]
    fn tag_seg_examples() {
        let inside = BinaryMask::from_fn(2, 2, |h, _| h == 0);
        let m = ScalarMap::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let s = TagSegSample {
            maps: vec![("a".into(), m)],
            gt: [("a".to_string(), inside.clone())].into(),
        };
        assert_eq!(eval_tag_seg(&[s], 0.5).unwrap(), 1.0);

        let low = ScalarMap::new(2, 2, vec![0.2; 4]).unwrap();
        let s = TagSegSample {
            maps: vec![("a".into(), low)],
            gt: [("a".to_string(), inside)].into(),
        };
        assert_eq!(eval_tag_seg(&[s], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn tag_seg_two_tags() {
        // assignments [A, A, B, bg]
        let a = ScalarMap::new(2, 2, vec![0.9, 0.8, 0.1, 0.1]).unwrap();
        let b = ScalarMap::new(2, 2, vec![0.1, 0.2, 0.9, 0.3]).unwrap();
        let s = TagSegSample {
            maps: vec![("A".into(), a), ("B".into(), b)],
            gt: [
                ("A".to_string(), BinaryMask::new(2, 2, vec![1, 0, 0, 0]).unwrap()),
                ("B".to_string(), BinaryMask::new(2, 2, vec![0, 1, 1, 0]).unwrap()),
            ]
            .into(),
        };
        assert_eq!(
            assign_pixels(&s.maps, 0.5).unwrap(),
            vec![Some(0), Some(0), Some(1), None]
        );
        assert!((eval_tag_seg(&[s], 0.5).unwrap() - 0.5).abs() < 1e-12);
    }
}
