//! COCO instance annotations: polygons, uncompressed and compressed RLE.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{CorpusImage, CorpusReader, Instance, SampleSource, COCO};
use crate::error::{Error, Result};
use crate::imageio;
use crate::mask::Mask;

#[derive(Debug, Clone, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Clone, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Debug, Clone, Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
    segmentation: Segmentation,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { size: [u32; 2], counts: RleCounts },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Raw(Vec<u32>),
    Compressed(String),
}

/// Decodes the LEB128-like run string used by compressed COCO RLE.
pub fn decode_rle_string(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            let Some(&b) = bytes.get(p) else {
                return Err(Error::config("RLE string ends inside a run"));
            };
            if !(48..48 + 64).contains(&b) || k > 12 {
                return Err(Error::config(format!("bad RLE byte {b:#x} at {p}")));
            }
            let c = i64::from(b - 48);
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    counts
        .into_iter()
        .map(|c| u32::try_from(c).map_err(|_| Error::config(format!("negative RLE run {c}"))))
        .collect()
}

/// Column-major runs, starting with background, into a mask.
pub fn rle_to_mask(counts: &[u32], width: u32, height: u32) -> Result<Mask> {
    let total: u64 = counts.iter().map(|c| u64::from(*c)).sum();
    if total != u64::from(width) * u64::from(height) {
        return Err(Error::config(format!("RLE covers {total} pixels, image has {}", width * height)));
    }
    let mut m = Mask::new(width, height);
    let mut pos = 0u64;
    for (i, c) in counts.iter().enumerate() {
        if i % 2 == 1 {
            for q in pos..pos + u64::from(*c) {
                m.set((q / u64::from(height)) as u32, (q % u64::from(height)) as u32, true);
            }
        }
        pos += u64::from(*c);
    }
    Ok(m)
}

/// Even-odd fill sampled at pixel centers; polygons are OR-ed together.
pub fn polygons_to_mask(polys: &[Vec<f64>], width: u32, height: u32) -> Result<Mask> {
    let mut m = Mask::new(width, height);
    for poly in polys {
        if poly.len() < 6 || poly.len() % 2 != 0 || poly.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(format!("polygon needs at least 3 finite points, got {} values", poly.len())));
        }
        let pts: Vec<(f64, f64)> = poly.chunks(2).map(|c| (c[0], c[1])).collect();
        let mut xs: Vec<f64> = Vec::new();
        for y in 0..height {
            let yc = f64::from(y) + 0.5;
            xs.clear();
            for i in 0..pts.len() {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[(i + 1) % pts.len()];
                if (y0 <= yc && yc < y1) || (y1 <= yc && yc < y0) {
                    xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks(2) {
                let [a, b] = pair else { continue };
                // pixels whose center lies in [a, b)
                let lo = (a - 0.5).ceil().max(0.0);
                let hi = (b - 0.5).ceil().min(f64::from(width));
                let mut x = lo;
                while x < hi {
                    m.set(x as u32, y, true);
                    x += 1.0;
                }
            }
        }
    }
    Ok(m)
}

pub fn segmentation_mask(seg: &Segmentation, width: u32, height: u32) -> Result<Mask> {
    match seg {
        Segmentation::Polygons(p) => polygons_to_mask(p, width, height),
        Segmentation::Rle { size, counts } => {
            if *size != [height, width] {
                return Err(Error::config(format!("RLE size {size:?} does not match image {height}x{width}")));
            }
            let runs = match counts {
                RleCounts::Raw(c) => c.clone(),
                RleCounts::Compressed(s) => decode_rle_string(s)?,
            };
            rle_to_mask(&runs, width, height)
        }
    }
}

/// Reads a COCO annotation file and the matching image directory. Crowd
/// annotations are not instances and are ignored.
pub struct CocoReader {
    images_dir: PathBuf,
    annotations_path: PathBuf,
    order: Vec<u64>,
    images: HashMap<u64, CocoImage>,
    anns: HashMap<u64, Vec<CocoAnnotation>>,
    categories: HashMap<u64, String>,
}

impl CocoReader {
    pub fn open(annotations: &Path, images_dir: &Path) -> Result<Self> {
        let file: CocoFile = imageio::read_json(annotations)?;
        let categories: HashMap<u64, String> = file.categories.into_iter().map(|c| (c.id, c.name)).collect();
        let order = file.images.iter().map(|i| i.id).collect();
        let images: HashMap<u64, CocoImage> = file.images.into_iter().map(|i| (i.id, i)).collect();
        let mut anns: HashMap<u64, Vec<CocoAnnotation>> = HashMap::new();
        for a in file.annotations {
            if !categories.contains_key(&a.category_id) {
                return Err(Error::config(format!(
                    "{}: unknown category {}",
                    annotations.display(),
                    a.category_id
                )));
            }
            if a.iscrowd == 0 {
                anns.entry(a.image_id).or_default().push(a);
            }
        }
        Ok(CocoReader {
            images_dir: images_dir.to_path_buf(),
            annotations_path: annotations.to_path_buf(),
            order,
            images,
            anns,
            categories,
        })
    }
}

impl CorpusReader for CocoReader {
    fn corpus(&self) -> &str {
        COCO
    }

    fn image_ids(&self) -> Vec<String> {
        self.order.iter().map(u64::to_string).collect()
    }

    fn load(&self, image_id: &str) -> Result<CorpusImage> {
        let id: u64 = image_id
            .parse()
            .map_err(|_| Error::config(format!("bad COCO image id `{image_id}`")))?;
        let meta = self.images.get(&id).ok_or_else(|| {
            Error::config(format!("{}: no image {id}", self.annotations_path.display()))
        })?;
        let image = imageio::load_rgb(&self.images_dir.join(&meta.file_name))?;
        if image.dimensions() != (meta.width, meta.height) {
            return Err(Error::config(format!(
                "{}: image is {:?}, annotations say {}x{}",
                meta.file_name,
                image.dimensions(),
                meta.width,
                meta.height
            )));
        }
        let instances = self
            .anns
            .get(&id)
            .map(Vec::as_slice)
            .unwrap_or_default()
            .iter()
            .map(|a| {
                let mask = segmentation_mask(&a.segmentation, meta.width, meta.height)?;
                Ok(Instance::new(self.categories[&a.category_id].clone(), mask))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CorpusImage {
            source: SampleSource::new(COCO, image_id),
            image,
            instances,
        })
    }
}
