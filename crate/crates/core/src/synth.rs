//! Seeded synthetic fixtures exhibiting single tag bias.
//!
//! Every fixture draws one orthonormal set of concept directions: object
//! concepts, filler words and a background direction. Each sample splits
//! its pixel grid into a large region showing object A, a smaller region
//! showing object B, and background. The caption embedding leans on A and
//! only weakly mentions B, so its similarity map lights up A alone while
//! pixel-level tag scores still find both objects.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::maps::{Embedding, PixelMap};
use crate::sample::{Sample, TagEmbedding};
use crate::tensor_io::BinaryMask;

pub const OBJECTS: [&str; 8] = ["dog", "frisbee", "cat", "sofa", "car", "tree", "boat", "kite"];
pub const FILLERS: [&str; 6] = ["a", "the", "with", "on", "photo", "/"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Filler tags per sample.
    pub fillers: usize,
    /// Norm of the Gaussian noise added to each pixel embedding.
    pub pixel_noise: f64,
    /// Norm of the noise added to text and tag embeddings.
    pub text_noise: f64,
    /// Weight of object B in the caption embedding (A has weight 1).
    pub text_bias: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 6,
            width: 6,
            channels: 16,
            fillers: 3,
            pixel_noise: 0.15,
            text_noise: 0.05,
            text_bias: 0.25,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let needed = OBJECTS.len() + FILLERS.len() + 1;
        if self.channels < needed {
            return Err(Error::Config(format!(
                "synthetic fixtures need at least {needed} channels, got {}",
                self.channels
            )));
        }
        if self.height < 2 || self.width < 2 {
            return Err(Error::Config("synthetic grids must be at least 2x2".into()));
        }
        if self.fillers > FILLERS.len() {
            return Err(Error::Config(format!("at most {} filler tags", FILLERS.len())));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn with_noise(rng: &mut ChaCha8Rng, base: &[f64], norm: f64) -> Vec<f64> {
    let scale = norm / (base.len() as f64).sqrt();
    base.iter()
        .zip(gaussian(rng, base.len()))
        .map(|(b, n)| b + scale * n)
        .collect()
}

/// `count` orthonormal vectors by Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Concept directions shared by every sample of one fixture.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub objects: Vec<Vec<f64>>,
    pub fillers: Vec<Vec<f64>>,
    pub background: Vec<f64>,
}

impl Vocabulary {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dirs = orthonormal(&mut rng, OBJECTS.len() + FILLERS.len() + 1, channels);
        let background = dirs.pop().expect("background direction");
        let fillers = dirs.split_off(OBJECTS.len());
        Self {
            objects: dirs,
            fillers,
            background,
        }
    }
}

/// Which region a pixel belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Major,
    Minor,
    Background,
}

/// Major region: half the grid; minor: a quadrant; background: the rest.
/// Flips vary the placement per sample.
fn layout(h: usize, w: usize, flip_rows: bool, flip_cols: bool) -> Vec<Region> {
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let r = if flip_rows { h - 1 - r } else { r };
            let c = if flip_cols { w - 1 - c } else { c };
            out.push(if c < w / 2 {
                Region::Major
            } else if r < h / 2 {
                Region::Minor
            } else {
                Region::Background
            });
        }
    }
    out
}

/// One biased sample. `index` picks the object pair and layout.
pub fn bias_sample(vocab: &Vocabulary, config: &SynthConfig, id: &str, rng: &mut ChaCha8Rng) -> Result<Sample> {
    config.validate()?;
    let (h, w, c) = (config.height, config.width, config.channels);
    let mut objects: Vec<usize> = (0..OBJECTS.len()).collect();
    objects.shuffle(rng);
    let (a, b) = (objects[0], objects[1]);
    let mut fillers: Vec<usize> = (0..FILLERS.len()).collect();
    fillers.shuffle(rng);
    fillers.truncate(config.fillers);

    let regions = layout(h, w, rng.random(), rng.random());
    let mut data = Vec::with_capacity(h * w * c);
    for r in &regions {
        let base = match r {
            Region::Major => &vocab.objects[a],
            Region::Minor => &vocab.objects[b],
            Region::Background => &vocab.background,
        };
        let magnitude = rng.random_range(0.8..1.25);
        let px = with_noise(rng, base, config.pixel_noise);
        data.extend(px.into_iter().map(|v| v * magnitude));
    }
    let pixels = PixelMap::new(h, w, c, data)?;

    let caption: Vec<f64> = vocab.objects[a]
        .iter()
        .zip(&vocab.objects[b])
        .map(|(x, y)| x + config.text_bias * y)
        .collect();
    let text_embedding = Embedding(with_noise(rng, &caption, config.text_noise));

    let mut candidates = vec![
        TagEmbedding::new(
            OBJECTS[a],
            Embedding(with_noise(rng, &vocab.objects[a], config.text_noise)),
        ),
        TagEmbedding::new(
            OBJECTS[b],
            Embedding(with_noise(rng, &vocab.objects[b], config.text_noise)),
        ),
    ];
    for &f in &fillers {
        candidates.push(TagEmbedding::new(
            FILLERS[f],
            Embedding(with_noise(rng, &vocab.fillers[f], config.text_noise)),
        ));
    }
    candidates.shuffle(rng);
    let text = candidates.iter().map(|t| t.tag.as_str()).collect::<Vec<_>>().join(" ");

    let mask_of = |want: &[Region]| {
        BinaryMask::new(h, w, regions.iter().map(|r| u8::from(want.contains(r))).collect()).expect("layout mask")
    };
    let gt_tag_masks: BTreeMap<String, BinaryMask> = [
        (OBJECTS[a].to_string(), mask_of(&[Region::Major])),
        (OBJECTS[b].to_string(), mask_of(&[Region::Minor])),
    ]
    .into();
    Ok(Sample {
        id: id.to_string(),
        text,
        pixels,
        text_embedding,
        candidates,
        gt_tags: Some(vec![OBJECTS[a].to_string(), OBJECTS[b].to_string()]),
        gt_text_mask: Some(mask_of(&[Region::Major, Region::Minor])),
        gt_tag_masks: Some(gt_tag_masks),
    })
}

/// `n` biased samples sharing one vocabulary, fully determined by `seed`.
pub fn fixture(n: usize, seed: u64, config: &SynthConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let vocab = Vocabulary::new(config.channels, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    (0..n)
        .map(|i| bias_sample(&vocab, config, &format!("s{seed}_{i:03}"), &mut rng))
        .collect()
}

/// A small unstructured instance: Gaussian pixels, text and tags, with a
/// random non-empty subset of tags marked selected.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub pixels: PixelMap,
    pub text: Embedding,
    pub candidates: Vec<TagEmbedding>,
    pub selected: Vec<String>,
}

/// Dimensions drawn uniformly from `1..=max_side` (grid), `2..=max_channels`
/// and `1..=max_tags`.
pub fn random_instance(seed: u64, max_side: usize, max_channels: usize, max_tags: usize) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(1..=max_side.max(1));
    let w = rng.random_range(1..=max_side.max(1));
    let c = rng.random_range(2..=max_channels.max(2));
    let n = rng.random_range(1..=max_tags.max(1));
    let pixels = PixelMap::new(h, w, c, gaussian(&mut rng, h * w * c)).expect("consistent dims");
    let text = Embedding(gaussian(&mut rng, c));
    let candidates: Vec<TagEmbedding> = (0..n)
        .map(|i| TagEmbedding::new(format!("t{i}"), Embedding(gaussian(&mut rng, c))))
        .collect();
    let mut selected: Vec<String> = candidates
        .iter()
        .filter(|_| rng.random_bool(0.5))
        .map(|t| t.tag.clone())
        .collect();
    if selected.is_empty() {
        selected.push(candidates[0].tag.clone());
    }
    RandomInstance {
        pixels,
        text,
        candidates,
        selected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = fixture(3, 7, &cfg).unwrap();
        let b = fixture(3, 7, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, fixture(3, 8, &cfg).unwrap());
    }

    #[test]
    fn fixture_shapes() {
        let cfg = SynthConfig::default();
        let s = &fixture(1, 0, &cfg).unwrap()[0];
        assert_eq!((s.pixels.height(), s.pixels.width(), s.pixels.channels()), (6, 6, 16));
        assert_eq!(s.candidates.len(), 2 + cfg.fillers);
        let gt = s.gt_tags.as_ref().unwrap();
        assert!(gt.iter().all(|t| s.candidates.iter().any(|c| &c.tag == t)));
        assert_eq!(s.gt_text_mask.as_ref().unwrap().count(), 27);
    }

    #[test]
    fn too_few_channels_rejected() {
        let cfg = SynthConfig {
            channels: 8,
            ..SynthConfig::default()
        };
        assert!(matches!(fixture(1, 0, &cfg), Err(Error::Config(_))));
    }
}
