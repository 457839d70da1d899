//! Samples with every referenced tensor loaded into memory.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::maps::{Embedding, PixelMap};
use crate::par::Exec;
use crate::tensor_io::{
    read_mask, read_tensor, write_mask, write_tensor, BinaryMask, CandidateTag, Manifest, SampleManifest,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TagEmbedding {
    pub tag: String,
    pub embedding: Embedding,
}

impl TagEmbedding {
    pub fn new(tag: impl Into<String>, embedding: Embedding) -> Self {
        Self {
            tag: tag.into(),
            embedding,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub pixels: PixelMap,
    pub text_embedding: Embedding,
    pub candidates: Vec<TagEmbedding>,
    pub gt_tags: Option<Vec<String>>,
    pub gt_text_mask: Option<BinaryMask>,
    pub gt_tag_masks: Option<BTreeMap<String, BinaryMask>>,
}

impl Sample {
    pub fn candidate_names(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.tag.clone()).collect()
    }

    pub fn load(manifest: &Manifest, entry: &SampleManifest) -> Result<Self> {
        let pixels = PixelMap::from_tensor(&read_tensor(&manifest.resolve(&entry.pixel_embedding_path))?)?;
        let text_embedding = Embedding::from_tensor(&read_tensor(&manifest.resolve(&entry.text_embedding_path))?)?;
        let channels = pixels.channels();
        let check = |what: &str, e: &Embedding| {
            if e.len() == channels {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "sample {}: {what} has {} channels, pixel map has {channels}",
                    entry.sample_id,
                    e.len()
                )))
            }
        };
        check("text embedding", &text_embedding)?;
        let mut candidates = Vec::with_capacity(entry.candidate_tags.len());
        for c in &entry.candidate_tags {
            let e = Embedding::from_tensor(&read_tensor(&manifest.resolve(&c.embedding_path))?)?;
            check(&format!("tag {:?}", c.tag), &e)?;
            candidates.push(TagEmbedding::new(c.tag.clone(), e));
        }
        let (h, w) = (pixels.height(), pixels.width());
        let check_mask = |what: &str, m: BinaryMask| {
            if (m.height(), m.width()) == (h, w) {
                Ok(m)
            } else {
                Err(Error::Shape(format!(
                    "sample {}: {what} is {}x{}, pixel map is {h}x{w}",
                    entry.sample_id,
                    m.height(),
                    m.width()
                )))
            }
        };
        let gt_text_mask = entry
            .gt_text_mask_path
            .as_ref()
            .map(|p| check_mask("text mask", read_mask(&manifest.resolve(p))?))
            .transpose()?;
        let gt_tag_masks = entry
            .gt_tag_mask_paths
            .as_ref()
            .map(|paths| {
                paths
                    .iter()
                    .map(|(tag, p)| {
                        Ok((
                            tag.clone(),
                            check_mask(&format!("mask of tag {tag:?}"), read_mask(&manifest.resolve(p))?)?,
                        ))
                    })
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .transpose()?;
        Ok(Self {
            id: entry.sample_id.clone(),
            text: entry.text.clone(),
            pixels,
            text_embedding,
            candidates,
            gt_tags: entry.gt_tags.clone(),
            gt_text_mask,
            gt_tag_masks,
        })
    }

    /// Writes every tensor of the sample under `dir` and returns its manifest
    /// entry with paths relative to `dir`.
    pub fn write(&self, dir: &Path) -> Result<SampleManifest> {
        let id = &self.id;
        let pixel_path = format!("{id}.pixels.ttdt");
        write_tensor(&self.pixels.to_tensor(), &dir.join(&pixel_path))?;
        let text_path = format!("{id}.text.ttdt");
        write_tensor(&self.text_embedding.to_tensor(), &dir.join(&text_path))?;
        let mut candidate_tags = Vec::with_capacity(self.candidates.len());
        for (i, c) in self.candidates.iter().enumerate() {
            let p = format!("{id}.tag{i}.ttdt");
            write_tensor(&c.embedding.to_tensor(), &dir.join(&p))?;
            candidate_tags.push(CandidateTag {
                tag: c.tag.clone(),
                embedding_path: p.into(),
            });
        }
        let gt_text_mask_path = match &self.gt_text_mask {
            Some(m) => {
                let p = format!("{id}.textmask.ttdt");
                write_mask(m, &dir.join(&p))?;
                Some(p.into())
            }
            None => None,
        };
        let gt_tag_mask_paths = match &self.gt_tag_masks {
            Some(masks) => {
                let mut out = BTreeMap::new();
                for (i, (tag, m)) in masks.iter().enumerate() {
                    let p = format!("{id}.tagmask{i}.ttdt");
                    write_mask(m, &dir.join(&p))?;
                    out.insert(tag.clone(), p.into());
                }
                Some(out)
            }
            None => None,
        };
        Ok(SampleManifest {
            sample_id: id.clone(),
            pixel_embedding_path: pixel_path.into(),
            text: self.text.clone(),
            text_embedding_path: text_path.into(),
            candidate_tags,
            gt_tags: self.gt_tags.clone(),
            gt_text_mask_path,
            gt_tag_mask_paths,
        })
    }
}

pub fn load_samples(manifest: &Manifest, exec: Exec) -> Result<Vec<Sample>> {
    exec.try_map(&manifest.samples, |entry| Sample::load(manifest, entry))
}
