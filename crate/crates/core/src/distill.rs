//! Text-tag self-distillation losses and their closed-form gradients.
//!
//! With `c_T` the similarity map of the caption, `c_i` the map of tag `i`,
//! `n(.)` min-max normalization and `U = max_{i selected} n(c_i)`:
//!
//! ```text
//! L_distill = || c_T - U ||^2
//! L_tag     = sum_i || c_i - n(c_i) ||^2   (selected)
//!           + sum_i || c_i ||^2            (not selected)
//! L         = L_distill + L_tag
//! ```
//!
//! `U` and every `n(c_i)` are stop-gradient targets: they are computed once
//! per evaluation point ([`Targets`]) and held constant for differentiation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::maps::{Embedding, PixelMap, ScalarMap};
use crate::par::Exec;
use crate::sample::TagEmbedding;
use crate::scoring::{dot, norm, pixel_norms, simmap_with_norms};

/// Spread below which a map counts as constant under min-max normalization.
pub const CONSTANT_MAP_EPS: f64 = 1e-12;

/// How squared norms over pixels are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    /// Sum divided by H·W.
    Mean,
}

impl Reduction {
    fn scale(self, pixels: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / pixels as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            _ => Err(Error::Config(format!("unknown reduction {s:?}; valid: sum, mean"))),
        }
    }
}

/// `(x - min) / (max - min)`, or all zeros for a constant map.
pub fn minmax_norm(map: &ScalarMap) -> Result<ScalarMap> {
    if map.is_empty() {
        return Err(Error::Shape("cannot normalize an empty map".into()));
    }
    let (lo, hi) = (map.min(), map.max());
    let span = hi - lo;
    let values = if span < CONSTANT_MAP_EPS {
        vec![0.0; map.len()]
    } else {
        map.values().iter().map(|v| (v - lo) / span).collect()
    };
    ScalarMap::new(map.height(), map.width(), values)
}

/// Element-wise maximum; an empty list yields zeros of the given shape.
pub fn union_max(maps: &[ScalarMap], height: usize, width: usize) -> Result<ScalarMap> {
    let mut out: Option<Vec<f64>> = None;
    for m in maps {
        if m.shape() != (height, width) {
            return Err(Error::Shape(format!(
                "union of a {}x{} map into a {height}x{width} union",
                m.height(),
                m.width()
            )));
        }
        match &mut out {
            None => out = Some(m.values().to_vec()),
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(m.values()) {
                    *a = a.max(*v);
                }
            }
        }
    }
    ScalarMap::new(height, width, out.unwrap_or_else(|| vec![0.0; height * width]))
}

/// Distillation target: union of the normalized maps of the selected tags.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub union_map: ScalarMap,
    pub contributors: Vec<String>,
}

pub fn build_pseudo_label(pixels: &PixelMap, selected: &[TagEmbedding]) -> Result<PseudoLabel> {
    let norms = pixel_norms(pixels)?;
    let normalized = selected
        .iter()
        .map(|t| minmax_norm(&simmap_with_norms(pixels, &norms, &t.embedding)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoLabel {
        union_map: union_max(&normalized, pixels.height(), pixels.width())?,
        contributors: selected.iter().map(|t| t.tag.clone()).collect(),
    })
}

fn squared_distance(a: &ScalarMap, b: &ScalarMap) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_map_shape(pixels: &PixelMap, m: &ScalarMap, what: &str) -> Result<()> {
    if m.shape() != (pixels.height(), pixels.width()) {
        return Err(Error::Shape(format!(
            "{what} is {}x{}, pixel map is {}x{}",
            m.height(),
            m.width(),
            pixels.height(),
            pixels.width()
        )));
    }
    Ok(())
}

pub fn loss_distill(pixels: &PixelMap, text: &Embedding, pseudo: &PseudoLabel, reduction: Reduction) -> Result<f64> {
    check_map_shape(pixels, &pseudo.union_map, "pseudo-label")?;
    let norms = pixel_norms(pixels)?;
    let live = simmap_with_norms(pixels, &norms, text)?;
    Ok(reduction.scale(pixels.len()) * squared_distance(&live, &pseudo.union_map))
}

fn check_selected(candidates: &[TagEmbedding], selected: &[String]) -> Result<Vec<bool>> {
    for s in selected {
        if !candidates.iter().any(|c| &c.tag == s) {
            return Err(Error::Contract(format!("selected tag {s:?} is not a candidate")));
        }
    }
    Ok(candidates
        .iter()
        .map(|c| selected.iter().any(|s| s == &c.tag))
        .collect())
}

/// Stop-gradient targets, frozen at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub pseudo: PseudoLabel,
    /// Per candidate: the normalized map when selected, zeros otherwise.
    pub per_tag: Vec<ScalarMap>,
    pub selected_mask: Vec<bool>,
}

impl Targets {
    pub fn compute(pixels: &PixelMap, candidates: &[TagEmbedding], selected: &[String]) -> Result<Self> {
        let selected_mask = check_selected(candidates, selected)?;
        let norms = pixel_norms(pixels)?;
        let (h, w) = (pixels.height(), pixels.width());
        let mut per_tag = Vec::with_capacity(candidates.len());
        let mut contributors = Vec::new();
        let mut normalized = Vec::new();
        for (c, &sel) in candidates.iter().zip(&selected_mask) {
            let live = simmap_with_norms(pixels, &norms, &c.embedding)?;
            if sel {
                let n = minmax_norm(&live)?;
                contributors.push(c.tag.clone());
                normalized.push(n.clone());
                per_tag.push(n);
            } else {
                per_tag.push(ScalarMap::zeros(h, w));
            }
        }
        Ok(Self {
            pseudo: PseudoLabel {
                union_map: union_max(&normalized, h, w)?,
                contributors,
            },
            per_tag,
            selected_mask,
        })
    }
}

/// Returns `(L_tag, per-tag D values in candidate order)`.
pub fn loss_tag(
    pixels: &PixelMap,
    candidates: &[TagEmbedding],
    selected: &[String],
    reduction: Reduction,
) -> Result<(f64, Vec<(String, f64)>)> {
    let targets = Targets::compute(pixels, candidates, selected)?;
    let report = loss_with_targets(pixels, None, candidates, &targets, reduction)?;
    Ok((report.l_tag, report.per_tag))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_distill: f64,
    pub l_tag: f64,
    pub total: f64,
    pub per_tag: Vec<(String, f64)>,
}

/// Evaluates both losses against frozen targets. Without a text embedding
/// `l_distill` is reported as zero.
pub fn loss_with_targets(
    pixels: &PixelMap,
    text: Option<&Embedding>,
    candidates: &[TagEmbedding],
    targets: &Targets,
    reduction: Reduction,
) -> Result<LossReport> {
    if targets.per_tag.len() != candidates.len() {
        return Err(Error::Shape(format!(
            "{} tag targets for {} candidates",
            targets.per_tag.len(),
            candidates.len()
        )));
    }
    check_map_shape(pixels, &targets.pseudo.union_map, "pseudo-label")?;
    let scale = reduction.scale(pixels.len());
    let norms = pixel_norms(pixels)?;
    let l_distill = match text {
        Some(t) => scale * squared_distance(&simmap_with_norms(pixels, &norms, t)?, &targets.pseudo.union_map),
        None => 0.0,
    };
    let mut per_tag = Vec::with_capacity(candidates.len());
    for (c, target) in candidates.iter().zip(&targets.per_tag) {
        let live = simmap_with_norms(pixels, &norms, &c.embedding)?;
        per_tag.push((c.tag.clone(), scale * squared_distance(&live, target)));
    }
    let l_tag = per_tag.iter().map(|(_, d)| d).sum::<f64>();
    Ok(LossReport {
        l_distill,
        l_tag,
        total: l_distill + l_tag,
        per_tag,
    })
}

pub fn loss_total(
    pixels: &PixelMap,
    text: &Embedding,
    candidates: &[TagEmbedding],
    selected: &[String],
    reduction: Reduction,
) -> Result<LossReport> {
    let targets = Targets::compute(pixels, candidates, selected)?;
    loss_with_targets(pixels, Some(text), candidates, &targets, reduction)
}

/// Gradients with respect to every embedding that enters the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_pixels: PixelMap,
    pub d_text: Embedding,
    /// One gradient per candidate, in candidate order.
    pub d_tags: Vec<(String, Embedding)>,
}

impl GradientBundle {
    pub fn zeros(pixels: &PixelMap, text_len: usize, candidates: &[TagEmbedding]) -> Self {
        Self {
            d_pixels: pixels.zeros_like(),
            d_text: Embedding(vec![0.0; text_len]),
            d_tags: candidates
                .iter()
                .map(|c| (c.tag.clone(), Embedding(vec![0.0; c.embedding.len()])))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &GradientBundle) {
        for (a, b) in self.d_pixels.data_mut().iter_mut().zip(other.d_pixels.data()) {
            *a += b;
        }
        for (a, b) in self.d_text.0.iter_mut().zip(&other.d_text.0) {
            *a += b;
        }
        for ((_, a), (_, b)) in self.d_tags.iter_mut().zip(&other.d_tags) {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                *x += y;
            }
        }
    }

    /// All entries, pixels first, then text, then tags.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.d_pixels.data().to_vec();
        v.extend_from_slice(&self.d_text.0);
        for (_, g) in &self.d_tags {
            v.extend_from_slice(&g.0);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Adds `coef * d cos(a, b)` into `da` and `db`.
///
/// `d cos / d a = b / (|a||b|) - cos * a / |a|^2`, symmetric in `b`.
#[inline]
fn accumulate_cosine_grad(a: &[f64], b: &[f64], na: f64, nb: f64, coef: f64, da: &mut [f64], db: Option<&mut [f64]>) {
    let inv = 1.0 / (na * nb);
    let c = dot(a, b) * inv;
    let ka = c / (na * na);
    for ((d, &x), &y) in da.iter_mut().zip(a).zip(b) {
        *d += coef * (y * inv - ka * x);
    }
    if let Some(db) = db {
        let kb = c / (nb * nb);
        for ((d, &x), &y) in db.iter_mut().zip(a).zip(b) {
            *d += coef * (x * inv - kb * y);
        }
    }
}

fn nonzero(e: &[f64], what: &str) -> Result<f64> {
    let n = norm(e);
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(Error::DegenerateVector(format!("{what} has zero norm")))
    }
}

/// Gradient of `L_distill` alone. Tag gradients are identically zero because
/// tags only reach this term through the stop-gradient union.
pub fn grad_distill_with_targets(
    pixels: &PixelMap,
    text: &Embedding,
    candidates: &[TagEmbedding],
    targets: &Targets,
    reduction: Reduction,
) -> Result<GradientBundle> {
    check_map_shape(pixels, &targets.pseudo.union_map, "pseudo-label")?;
    let mut g = GradientBundle::zeros(pixels, text.len(), candidates);
    let scale = reduction.scale(pixels.len());
    let norms = pixel_norms(pixels)?;
    let nt = nonzero(text.as_slice(), "text embedding")?;
    let live = simmap_with_norms(pixels, &norms, text)?;
    let union = targets.pseudo.union_map.values();
    for i in 0..pixels.len() {
        let coef = 2.0 * scale * (live.values()[i] - union[i]);
        if coef == 0.0 {
            continue;
        }
        accumulate_cosine_grad(
            pixels.pixel(i),
            text.as_slice(),
            norms[i],
            nt,
            coef,
            g.d_pixels.pixel_mut(i),
            Some(&mut g.d_text.0),
        );
    }
    Ok(g)
}

/// Gradient of `L_tag` alone; the text embedding gets zero.
pub fn grad_tag_with_targets(
    pixels: &PixelMap,
    text_len: usize,
    candidates: &[TagEmbedding],
    targets: &Targets,
    reduction: Reduction,
) -> Result<GradientBundle> {
    let mut g = GradientBundle::zeros(pixels, text_len, candidates);
    let scale = reduction.scale(pixels.len());
    let norms = pixel_norms(pixels)?;
    for (k, (c, target)) in candidates.iter().zip(&targets.per_tag).enumerate() {
        check_map_shape(pixels, target, "tag target")?;
        let nt = nonzero(c.embedding.as_slice(), &format!("tag {:?}", c.tag))?;
        let live = simmap_with_norms(pixels, &norms, &c.embedding)?;
        let d_tag = &mut g.d_tags[k].1 .0;
        for (i, &np) in norms.iter().enumerate() {
            let coef = 2.0 * scale * (live.values()[i] - target.values()[i]);
            if coef == 0.0 {
                continue;
            }
            accumulate_cosine_grad(
                pixels.pixel(i),
                c.embedding.as_slice(),
                np,
                nt,
                coef,
                g.d_pixels.pixel_mut(i),
                Some(d_tag),
            );
        }
    }
    Ok(g)
}

pub fn grad_with_targets(
    pixels: &PixelMap,
    text: &Embedding,
    candidates: &[TagEmbedding],
    targets: &Targets,
    reduction: Reduction,
) -> Result<GradientBundle> {
    let mut g = grad_distill_with_targets(pixels, text, candidates, targets, reduction)?;
    g.add(&grad_tag_with_targets(
        pixels,
        text.len(),
        candidates,
        targets,
        reduction,
    )?);
    Ok(g)
}

pub fn grad_total(
    pixels: &PixelMap,
    text: &Embedding,
    candidates: &[TagEmbedding],
    selected: &[String],
    reduction: Reduction,
) -> Result<GradientBundle> {
    let targets = Targets::compute(pixels, candidates, selected)?;
    grad_with_targets(pixels, text, candidates, &targets, reduction)
}

/// Largest relative disagreement between [`grad_total`] and central
/// differences of the loss, with targets frozen at the base point.
///
/// Error per coordinate is `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check(
    pixels: &PixelMap,
    text: &Embedding,
    candidates: &[TagEmbedding],
    selected: &[String],
    step: f64,
    reduction: Reduction,
) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let targets = Targets::compute(pixels, candidates, selected)?;
    let analytic = grad_with_targets(pixels, text, candidates, &targets, reduction)?.flatten();
    let n_pix = pixels.data().len();
    let n_text = text.len();

    let loss_at = |coord: usize, delta: f64| -> Result<f64> {
        let mut px = pixels.clone();
        let mut tx = text.clone();
        let mut cands = candidates.to_vec();
        if coord < n_pix {
            px.data_mut()[coord] += delta;
        } else if coord < n_pix + n_text {
            tx.0[coord - n_pix] += delta;
        } else {
            let mut k = coord - n_pix - n_text;
            for c in &mut cands {
                if k < c.embedding.len() {
                    c.embedding.0[k] += delta;
                    break;
                }
                k -= c.embedding.len();
            }
        }
        Ok(loss_with_targets(&px, Some(&tx), &cands, &targets, reduction)?.total)
    };

    let errors = Exec::default().map_range(analytic.len(), |coord| -> Result<f64> {
        let numeric = (loss_at(coord, step)? - loss_at(coord, -step)?) / (2.0 * step);
        let a = analytic[coord];
        Ok((a - numeric).abs() / a.abs().max(1.0))
    });
    errors.into_iter().try_fold(0.0f64, |acc, e| Ok(acc.max(e?)))
}
