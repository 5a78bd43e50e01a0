//! BDD100k instance bitmasks.
//!
//! Each annotation PNG is RGBA: red holds the category id (0 is
//! background), blue and alpha hold the instance id as `B * 256 + A`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{CorpusImage, CorpusReader, Instance, SampleSource, BDD100K};
use crate::error::{Error, Result};
use crate::imageio;
use crate::mask::Mask;

pub const CATEGORIES: [&str; 8] = ["pedestrian", "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle"];

pub fn category_name(id: u8) -> Option<&'static str> {
    CATEGORIES.get(usize::from(id).checked_sub(1)?).copied()
}

/// Splits a bitmask into instances ordered by instance id.
pub fn decode_bitmask(bitmask: &image::RgbaImage) -> Result<Vec<Instance>> {
    let (w, h) = bitmask.dimensions();
    let mut by_id: BTreeMap<(u16, u8), Mask> = BTreeMap::new();
    for (x, y, p) in bitmask.enumerate_pixels() {
        let [r, _, b, a] = p.0;
        if r == 0 {
            continue;
        }
        let id = u16::from(b) * 256 + u16::from(a);
        by_id.entry((id, r)).or_insert_with(|| Mask::new(w, h)).set(x, y, true);
    }
    by_id
        .into_iter()
        .map(|((id, cat), m)| {
            let name = category_name(cat).ok_or_else(|| Error::config(format!("instance {id}: unknown category {cat}")))?;
            Ok(Instance::new(name, m))
        })
        .collect()
}

pub struct BddReader {
    images_dir: PathBuf,
    bitmask_dir: PathBuf,
    stems: Vec<String>,
}

impl BddReader {
    pub fn open(images_dir: &Path, bitmask_dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(bitmask_dir).map_err(|e| Error::io(bitmask_dir, e))?;
        let mut stems = Vec::new();
        for e in entries {
            let p = e.map_err(|e| Error::io(bitmask_dir, e))?.path();
            if p.extension().is_some_and(|x| x == "png") {
                if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                    stems.push(s.to_string());
                }
            }
        }
        stems.sort();
        Ok(BddReader {
            images_dir: images_dir.to_path_buf(),
            bitmask_dir: bitmask_dir.to_path_buf(),
            stems,
        })
    }

    fn image_path(&self, stem: &str) -> PathBuf {
        ["jpg", "png"]
            .iter()
            .map(|ext| self.images_dir.join(format!("{stem}.{ext}")))
            .find(|p| p.exists())
            .unwrap_or_else(|| self.images_dir.join(format!("{stem}.jpg")))
    }
}

impl CorpusReader for BddReader {
    fn corpus(&self) -> &str {
        BDD100K
    }

    fn image_ids(&self) -> Vec<String> {
        self.stems.clone()
    }

    fn load(&self, image_id: &str) -> Result<CorpusImage> {
        let image = imageio::load_rgb(&self.image_path(image_id))?;
        let bitmask = imageio::load_rgba(&self.bitmask_dir.join(format!("{image_id}.png")))?;
        if bitmask.dimensions() != image.dimensions() {
            return Err(Error::config(format!(
                "{image_id}: bitmask is {:?}, image is {:?}",
                bitmask.dimensions(),
                image.dimensions()
            )));
        }
        Ok(CorpusImage {
            source: SampleSource::new(BDD100K, image_id),
            image,
            instances: decode_bitmask(&bitmask)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgba, RgbaImage};

    #[test]
    fn instances_split_by_id() {
        let mut bm = RgbaImage::new(4, 3);
        bm.put_pixel(0, 0, Rgba([3, 0, 0, 2]));
        bm.put_pixel(1, 0, Rgba([3, 0, 0, 2]));
        bm.put_pixel(3, 2, Rgba([2, 0, 1, 0]));
        let inst = decode_bitmask(&bm).unwrap();
        assert_eq!(inst.len(), 2);
        assert_eq!((inst[0].label.as_str(), inst[0].mask.count()), ("car", 2));
        assert_eq!((inst[1].label.as_str(), inst[1].mask.count()), ("rider", 1));
        bm.put_pixel(2, 2, Rgba([9, 0, 0, 5]));
        assert!(decode_bitmask(&bm).is_err());
    }
}
