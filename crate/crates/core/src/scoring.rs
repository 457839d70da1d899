//! Image-grounded tag scoring.
//!
//! Four scorers rank the candidate tags of a sample:
//!
//! * `image`: cosine between the average-pooled pixel embedding and the tag.
//! * `pixel`: the best cosine between the tag and any single pixel embedding.
//! * `text`: cosine between the caption embedding and the tag.
//! * `seg`: share of pixels whose most similar tag is this one.
//!
//! Embeddings are used as stored; normalization happens inside [`cosine`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{Embedding, PixelMap, ScalarMap};
use crate::par::Exec;
use crate::sample::{Sample, TagEmbedding};

/// H×W cosine similarities between pixel embeddings and one embedding.
pub type SimilarityMap = ScalarMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    Image,
    Text,
    #[default]
    Pixel,
    Seg,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 4] = [Self::Image, Self::Text, Self::Pixel, Self::Seg];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Image => "image",
            Self::Text => "text",
            Self::Pixel => "pixel",
            Self::Seg => "seg",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; valid: image, text, pixel, seg")))
    }
}

/// Scores of the candidate tags of one sample, in candidate order.
#[derive(Debug, Clone, PartialEq)]
pub struct TagScores {
    pub entries: Vec<(String, f64)>,
    pub method: ScoreMethod,
}

impl TagScores {
    pub fn new(method: ScoreMethod, entries: Vec<(String, f64)>) -> Self {
        Self { entries, method }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, tag: &str) -> Option<f64> {
        self.entries.iter().find(|(t, _)| t == tag).map(|(_, s)| *s)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, s)| *s).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn nonzero_norm(a: &[f64], what: &str) -> Result<f64> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(Error::DegenerateVector(format!("{what} has zero norm")))
    }
}

/// Cosine with both norms precomputed, clamped to [-1, 1].
#[inline]
pub(crate) fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = nonzero_norm(a, "first vector")?;
    let nb = nonzero_norm(b, "second vector")?;
    Ok(cosine_with_norms(a, b, na, nb))
}

/// Channel-wise mean over all pixel positions.
pub fn global_pool(pixels: &PixelMap) -> Result<Embedding> {
    if pixels.is_empty() {
        return Err(Error::Shape("cannot pool an empty pixel map".into()));
    }
    let mut acc = vec![0.0; pixels.channels()];
    for px in pixels.pixels() {
        for (a, v) in acc.iter_mut().zip(px) {
            *a += v;
        }
    }
    let n = pixels.len() as f64;
    Ok(Embedding(acc.into_iter().map(|v| v / n).collect()))
}

/// Norms of every pixel embedding; fails on the first zero-norm pixel.
pub(crate) fn pixel_norms(pixels: &PixelMap) -> Result<Vec<f64>> {
    pixels
        .pixels()
        .enumerate()
        .map(|(i, px)| nonzero_norm(px, &format!("pixel {i}")))
        .collect()
}

fn check_channels(pixels: &PixelMap, e: &Embedding) -> Result<()> {
    if pixels.channels() != e.len() {
        return Err(Error::Shape(format!(
            "pixel map has {} channels, embedding has {}",
            pixels.channels(),
            e.len()
        )));
    }
    Ok(())
}

pub(crate) fn simmap_with_norms(pixels: &PixelMap, norms: &[f64], e: &Embedding) -> Result<SimilarityMap> {
    check_channels(pixels, e)?;
    let ne = nonzero_norm(e.as_slice(), "embedding")?;
    let values = pixels
        .pixels()
        .zip(norms)
        .map(|(px, &np)| cosine_with_norms(px, e.as_slice(), np, ne))
        .collect();
    ScalarMap::new(pixels.height(), pixels.width(), values)
}

/// Per-pixel cosine similarity between `pixels` and `embedding`.
pub fn simmap(pixels: &PixelMap, embedding: &Embedding) -> Result<SimilarityMap> {
    check_channels(pixels, embedding)?;
    let norms = pixel_norms(pixels)?;
    simmap_with_norms(pixels, &norms, embedding)
}

pub fn score_image(pixels: &PixelMap, tag: &Embedding) -> Result<f64> {
    check_channels(pixels, tag)?;
    cosine(global_pool(pixels)?.as_slice(), tag.as_slice())
}

pub fn score_pixel(pixels: &PixelMap, tag: &Embedding) -> Result<f64> {
    Ok(simmap(pixels, tag)?.max())
}

pub fn score_text(text: &Embedding, tag: &Embedding) -> Result<f64> {
    cosine(text.as_slice(), tag.as_slice())
}

/// Fraction of pixels whose most similar tag is each candidate.
///
/// Ties go to the earliest tag in candidate order.
pub fn score_seg(pixels: &PixelMap, tags: &[&Embedding]) -> Result<Vec<f64>> {
    if tags.is_empty() {
        return Err(Error::EmptyInput("seg scoring needs at least one tag".into()));
    }
    let norms = pixel_norms(pixels)?;
    let maps = tags
        .iter()
        .map(|t| simmap_with_norms(pixels, &norms, t))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0usize; tags.len()];
    for i in 0..pixels.len() {
        let mut best = 0;
        for k in 1..maps.len() {
            if maps[k].values()[i] > maps[best].values()[i] {
                best = k;
            }
        }
        counts[best] += 1;
    }
    let n = pixels.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Scores every candidate against the image (or caption) with `method`, in candidate order.
pub fn score_candidates(
    pixels: &PixelMap,
    text: &Embedding,
    candidates: &[TagEmbedding],
    method: ScoreMethod,
) -> Result<TagScores> {
    if candidates.is_empty() {
        return Ok(TagScores::new(method, Vec::new()));
    }
    let scores: Vec<f64> = match method {
        ScoreMethod::Image => {
            let pooled = global_pool(pixels)?;
            candidates
                .iter()
                .map(|c| {
                    check_channels(pixels, &c.embedding)?;
                    cosine(pooled.as_slice(), c.embedding.as_slice())
                })
                .collect::<Result<_>>()?
        }
        ScoreMethod::Text => candidates
            .iter()
            .map(|c| score_text(text, &c.embedding))
            .collect::<Result<_>>()?,
        ScoreMethod::Pixel => {
            let norms = pixel_norms(pixels)?;
            candidates
                .iter()
                .map(|c| Ok(simmap_with_norms(pixels, &norms, &c.embedding)?.max()))
                .collect::<Result<_>>()?
        }
        ScoreMethod::Seg => {
            let tags: Vec<&Embedding> = candidates.iter().map(|c| &c.embedding).collect();
            score_seg(pixels, &tags)?
        }
    };
    Ok(TagScores::new(
        method,
        candidates.iter().map(|c| c.tag.clone()).zip(scores).collect(),
    ))
}

pub fn score_all(sample: &Sample, method: ScoreMethod) -> Result<TagScores> {
    score_candidates(&sample.pixels, &sample.text_embedding, &sample.candidates, method)
}

pub fn score_batch(samples: &[Sample], method: ScoreMethod, exec: Exec) -> Result<Vec<TagScores>> {
    exec.try_map(samples, |s| score_all(s, method))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding(v.to_vec())
    }

    fn map(h: usize, w: usize, rows: &[&[f64]]) -> PixelMap {
        let c = rows[0].len();
        PixelMap::new(h, w, c, rows.concat()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector(_))
        ));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn pooling() {
        let one = map(1, 1, &[&[0.3, -2.0]]);
        assert_eq!(global_pool(&one).unwrap(), emb(&[0.3, -2.0]));
        let two = map(1, 2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(global_pool(&two).unwrap(), emb(&[0.5, 0.5]));
    }

    #[test]
    fn simmap_identity_and_orthogonal() {
        let e = emb(&[0.2, 0.7, -0.1]);
        let same = map(2, 2, &[e.as_slice(), e.as_slice(), e.as_slice(), e.as_slice()]);
        for v in simmap(&same, &e).unwrap().values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let ortho = map(1, 2, &[&[0.0, 1.0, 0.0], &[0.0, 0.0, 5.0]]);
        assert_eq!(simmap(&ortho, &emb(&[1.0, 0.0, 0.0])).unwrap().values(), &[0.0, 0.0]);
        assert!(matches!(simmap(&ortho, &emb(&[1.0, 0.0])), Err(Error::Shape(_))));
        let dead = map(1, 2, &[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]]);
        assert!(matches!(
            simmap(&dead, &emb(&[1.0, 0.0, 0.0])),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn pixel_score_finds_matching_pixel() {
        let tag = emb(&[0.0, 2.0]);
        let px = map(2, 2, &[&[1.0, 0.0], &[1.0, 1.0], &[0.0, 3.0], &[-1.0, 0.5]]);
        assert!((score_pixel(&px, &tag).unwrap() - 1.0).abs() < 1e-12);
        let single = map(1, 1, &[&[0.4, -0.9]]);
        assert_eq!(score_pixel(&single, &tag).unwrap(), score_image(&single, &tag).unwrap());
    }

    #[test]
    fn seg_three_to_one() {
        let a = emb(&[1.0, 0.0]);
        let b = emb(&[0.0, 1.0]);
        let px = map(2, 2, &[&[1.0, 0.1], &[0.9, 0.2], &[1.0, -0.3], &[0.1, 1.0]]);
        assert_eq!(score_seg(&px, &[&a, &b]).unwrap(), vec![0.75, 0.25]);
        assert_eq!(score_seg(&px, &[&b]).unwrap(), vec![1.0]);
    }

    #[test]
    fn seg_ties_go_to_first_tag() {
        let a = emb(&[1.0, 0.0]);
        let px = map(1, 2, &[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(score_seg(&px, &[&a, &a]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("seg".parse::<ScoreMethod>().unwrap(), ScoreMethod::Seg);
        let err = "foo".parse::<ScoreMethod>().unwrap_err().to_string();
        assert!(err.contains("image, text, pixel, seg"));
    }

    #[test]
    fn empty_candidates_give_empty_scores() {
        let px = map(1, 1, &[&[1.0]]);
        let s = score_candidates(&px, &emb(&[1.0]), &[], ScoreMethod::Seg).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.method, ScoreMethod::Seg);
    }
}
