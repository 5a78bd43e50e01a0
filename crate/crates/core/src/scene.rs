//! Attribute space, assets, scenes and result records.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, RgbImage, RgbaImage};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imageio;
use crate::mask::Mask;
use crate::num::Rate;
use crate::{PixelBox, RealBox};

/// Class label every synthesized object carries.
pub const GT_CLASS: &str = "car";

/// Sentinel for "recolor stage skipped".
pub const ORIGINAL: &str = "ORIGINAL";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectColor {
    Original,
    Named(String),
}

impl ObjectColor {
    pub fn named(name: impl Into<String>) -> Self {
        ObjectColor::Named(name.into())
    }

    pub fn is_original(&self) -> bool {
        matches!(self, ObjectColor::Original)
    }
}

impl fmt::Display for ObjectColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectColor::Original => f.write_str(ORIGINAL),
            ObjectColor::Named(n) => f.write_str(n),
        }
    }
}

impl FromStr for ObjectColor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(Error::InvalidAttribute {
                field: "object_color",
                reason: "empty color name".into(),
            }),
            ORIGINAL => Ok(ObjectColor::Original),
            n => Ok(ObjectColor::Named(n.to_string())),
        }
    }
}

impl Serialize for ObjectColor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObjectColor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Scene background: a plain palette color or an outpainting prompt.
///
/// Text form is `plain:<color>` or `outpaint:<prompt>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Background {
    Plain(String),
    Outpaint(String),
}

impl fmt::Display for Background {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Background::Plain(c) => write!(f, "plain:{c}"),
            Background::Outpaint(p) => write!(f, "outpaint:{p}"),
        }
    }
}

impl FromStr for Background {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidAttribute {
            field: "background",
            reason: format!("{reason}: `{s}`"),
        };
        match s.split_once(':') {
            Some(("plain", c)) if !c.is_empty() => Ok(Background::Plain(c.to_string())),
            Some(("outpaint", p)) if !p.trim().is_empty() => Ok(Background::Outpaint(p.to_string())),
            Some(("plain" | "outpaint", _)) => Err(bad("empty background value")),
            _ => Err(bad("expected `plain:<color>` or `outpaint:<prompt>`")),
        }
    }
}

impl Serialize for Background {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Background {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One point of the controllable attribute space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    pub object_type: String,
    pub object_color: ObjectColor,
    pub orientation_deg: f64,
    pub scale_factor: f64,
    pub location: [f64; 2],
    pub background: Background,
}

impl AttributeVector {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidAttribute { field, reason });
        if self.object_type.trim().is_empty() {
            return bad("object_type", "empty object type".into());
        }
        if !(self.orientation_deg >= -180.0 && self.orientation_deg < 180.0) {
            return bad("orientation_deg", format!("{} not in [-180, 180)", self.orientation_deg));
        }
        if !(self.scale_factor >= 1.0) || !self.scale_factor.is_finite() {
            return bad("scale_factor", format!("{} is below 1.0", self.scale_factor));
        }
        if self.location.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad(
                "location",
                format!("({}, {}) not in [0,1]^2", self.location[0], self.location[1]),
            );
        }
        Ok(())
    }

    pub fn get(&self, name: AttrName) -> AttrValue {
        match name {
            AttrName::ScaleFactor => AttrValue::Number(self.scale_factor),
            AttrName::Orientation => AttrValue::Number(self.orientation_deg),
            AttrName::ObjectColor => AttrValue::Color(self.object_color.clone()),
            AttrName::Background => AttrValue::Background(self.background.clone()),
            AttrName::ObjectType => AttrValue::Text(self.object_type.clone()),
            AttrName::Location => AttrValue::Pair(self.location),
        }
    }

    /// Copy with one attribute replaced. Fails on a value of the wrong kind.
    pub fn with(&self, name: AttrName, value: AttrValue) -> Result<AttributeVector> {
        let mut v = self.clone();
        match (name, value) {
            (AttrName::ScaleFactor, AttrValue::Number(x)) => v.scale_factor = x,
            (AttrName::Orientation, AttrValue::Number(x)) => v.orientation_deg = x,
            (AttrName::ObjectColor, AttrValue::Color(c)) => v.object_color = c,
            (AttrName::Background, AttrValue::Background(b)) => v.background = b,
            (AttrName::ObjectType, AttrValue::Text(t)) => v.object_type = t,
            (AttrName::Location, AttrValue::Pair(p)) => v.location = p,
            (name, value) => {
                return Err(Error::config(format!("value {value} has the wrong kind for `{name}`")));
            }
        }
        Ok(v)
    }

    /// Stable content hash used as part of result-store keys.
    pub fn key_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("attribute vector serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Attribute names in canonical order (the report's column order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrName {
    ScaleFactor,
    #[serde(rename = "orientation_deg")]
    Orientation,
    ObjectColor,
    Background,
    ObjectType,
    Location,
}

impl AttrName {
    pub const ALL: [AttrName; 6] = [
        AttrName::ScaleFactor,
        AttrName::Orientation,
        AttrName::ObjectColor,
        AttrName::Background,
        AttrName::ObjectType,
        AttrName::Location,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttrName::ScaleFactor => "scale_factor",
            AttrName::Orientation => "orientation_deg",
            AttrName::ObjectColor => "object_color",
            AttrName::Background => "background",
            AttrName::ObjectType => "object_type",
            AttrName::Location => "location",
        }
    }

    /// Short column header used in report tables.
    pub fn column(self) -> &'static str {
        match self {
            AttrName::ScaleFactor => "scale",
            AttrName::Orientation => "angle",
            AttrName::ObjectColor => "O",
            AttrName::Background => "BG",
            AttrName::ObjectType => "type",
            AttrName::Location => "loc",
        }
    }
}

impl fmt::Display for AttrName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttrName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttrName::ALL
            .into_iter()
            .find(|a| a.as_str() == s || a.column() == s)
            .ok_or_else(|| Error::config(format!("unknown attribute `{s}`")))
    }
}

/// Value of a single attribute.
#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Text(String),
    Number(f64),
    Pair([f64; 2]),
    Color(ObjectColor),
    Background(Background),
}

impl AttrValue {
    /// Total order used for canonical tie-breaking.
    pub fn canonical_cmp(&self, other: &AttrValue) -> Ordering {
        use AttrValue::*;
        match (self, other) {
            (Number(a), Number(b)) => a.total_cmp(b),
            (Pair(a), Pair(b)) => a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])),
            (Text(a), Text(b)) => a.cmp(b),
            (Color(a), Color(b)) => a.cmp(b),
            (Background(a), Background(b)) => a.cmp(b),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            AttrValue::Text(_) => 0,
            AttrValue::Number(_) => 1,
            AttrValue::Pair(_) => 2,
            AttrValue::Color(_) => 3,
            AttrValue::Background(_) => 4,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            AttrValue::Number(x) => Value::from(*x),
            AttrValue::Pair(p) => Value::from(vec![p[0], p[1]]),
            other => Value::String(other.to_string()),
        }
    }

    /// Parses a JSON value as the value kind of attribute `name`.
    pub fn from_json(name: AttrName, v: &Value) -> Result<AttrValue> {
        let kind_err = || Error::config(format!("bad value {v} for attribute `{name}`"));
        match name {
            AttrName::ScaleFactor | AttrName::Orientation => v.as_f64().map(AttrValue::Number).ok_or_else(kind_err),
            AttrName::Location => {
                let arr = v.as_array().filter(|a| a.len() == 2).ok_or_else(kind_err)?;
                let x = arr[0].as_f64().ok_or_else(kind_err)?;
                let y = arr[1].as_f64().ok_or_else(kind_err)?;
                Ok(AttrValue::Pair([x, y]))
            }
            AttrName::ObjectColor => Ok(AttrValue::Color(v.as_str().ok_or_else(kind_err)?.parse()?)),
            AttrName::Background => Ok(AttrValue::Background(v.as_str().ok_or_else(kind_err)?.parse()?)),
            AttrName::ObjectType => Ok(AttrValue::Text(v.as_str().ok_or_else(kind_err)?.to_string())),
        }
    }

    /// Parses the textual form used on the command line.
    pub fn parse(name: AttrName, s: &str) -> Result<AttrValue> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad number `{t}` for `{name}`")))
        };
        match name {
            AttrName::ScaleFactor | AttrName::Orientation => Ok(AttrValue::Number(num(s)?)),
            AttrName::Location => {
                let (x, y) = s
                    .split_once(',')
                    .or_else(|| s.split_once(' '))
                    .ok_or_else(|| Error::config(format!("location `{s}` must be `x,y`")))?;
                Ok(AttrValue::Pair([num(x)?, num(y)?]))
            }
            AttrName::ObjectColor => Ok(AttrValue::Color(s.parse()?)),
            AttrName::Background => {
                let bg = if s.contains(':') {
                    s.parse()?
                } else {
                    Background::Plain(s.to_string())
                };
                Ok(AttrValue::Background(bg))
            }
            AttrName::ObjectType => Ok(AttrValue::Text(s.to_string())),
        }
    }

    /// Short human form for tables: plain backgrounds drop their prefix.
    pub fn short(&self) -> String {
        match self {
            AttrValue::Number(x) => format!("{x:.1}"),
            AttrValue::Pair(p) => format!("({}, {})", p[0], p[1]),
            AttrValue::Background(Background::Plain(c)) => c.clone(),
            AttrValue::Background(Background::Outpaint(p)) => format!("\"{p}\""),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Text(t) => f.write_str(t),
            AttrValue::Number(x) => write!(f, "{x}"),
            AttrValue::Pair(p) => write!(f, "{},{}", p[0], p[1]),
            AttrValue::Color(c) => write!(f, "{c}"),
            AttrValue::Background(b) => write!(f, "{b}"),
        }
    }
}

/// A partial attribute assignment plus the seeds it is evaluated over.
///
/// Attributes in `marginalized` are aggregated over; attributes in neither
/// set are unconstrained as well, but are not announced as "-".
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupSpec {
    pub fixed: BTreeMap<AttrName, AttrValue>,
    pub marginalized: BTreeSet<AttrName>,
    pub seeds: Vec<u64>,
}

impl SubgroupSpec {
    pub fn new(
        fixed: BTreeMap<AttrName, AttrValue>,
        marginalized: BTreeSet<AttrName>,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        let s = SubgroupSpec {
            fixed,
            marginalized,
            seeds,
        };
        s.validate()?;
        Ok(s)
    }

    /// Subgroup with every attribute pinned to `v`.
    pub fn cell(v: &AttributeVector, seeds: Vec<u64>) -> Result<Self> {
        let fixed = AttrName::ALL.into_iter().map(|a| (a, v.get(a))).collect();
        SubgroupSpec::new(fixed, BTreeSet::new(), seeds)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.fixed.keys().find(|a| self.marginalized.contains(a)) {
            return Err(Error::InvalidSubgroup(format!("`{a}` is both fixed and marginalized")));
        }
        for (name, value) in &self.fixed {
            // catches a value of the wrong kind
            let probe = AttributeVector {
                object_type: "x".into(),
                object_color: ObjectColor::Original,
                orientation_deg: 0.0,
                scale_factor: 1.0,
                location: [0.5, 0.5],
                background: Background::Plain("grey".into()),
            };
            probe
                .with(*name, value.clone())
                .map_err(|e| Error::InvalidSubgroup(e.to_string()))?;
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidSubgroup("no seeds".into()));
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::InvalidSubgroup("duplicate seeds".into()));
        }
        Ok(())
    }

    pub fn matches(&self, v: &AttributeVector) -> bool {
        self.fixed.iter().all(|(name, value)| v.get(*name) == *value)
    }

    pub fn covers_seed(&self, seed: u64) -> bool {
        self.seeds.contains(&seed)
    }

    /// Canonical order: attribute by attribute, pinned values before "-".
    pub fn canonical_cmp(&self, other: &SubgroupSpec) -> Ordering {
        for a in AttrName::ALL {
            let ord = match (self.fixed.get(&a), other.fixed.get(&a)) {
                (Some(x), Some(y)) => x.canonical_cmp(y),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            };
            if ord != Ordering::Equal {
                return ord;
            }
        }
        self.seeds.cmp(&other.seeds)
    }

    /// `scale_factor=6,orientation_deg=-50,background=-` style label.
    pub fn label(&self) -> String {
        AttrName::ALL
            .into_iter()
            .filter_map(|a| match self.fixed.get(&a) {
                Some(v) => Some(format!("{a}={v}")),
                None if self.marginalized.contains(&a) => Some(format!("{a}=-")),
                None => None,
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Inverse of [`SubgroupSpec::label`]. Keys may be attribute names or
    /// column headers; `-` marks a marginalized attribute.
    pub fn parse(text: &str, seeds: Vec<u64>) -> Result<Self> {
        // location values contain a comma, so glue key-less pieces back on
        let mut parts: Vec<String> = Vec::new();
        for piece in text.split(',') {
            match parts.last_mut() {
                Some(last) if !piece.contains('=') => {
                    last.push(',');
                    last.push_str(piece);
                }
                _ => parts.push(piece.to_string()),
            }
        }
        let mut fixed = BTreeMap::new();
        let mut marginalized = BTreeSet::new();
        for p in parts.iter().filter(|p| !p.trim().is_empty()) {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::InvalidSubgroup(format!("`{p}` is not `attribute=value`")))?;
            let name: AttrName = k.trim().parse()?;
            if fixed.contains_key(&name) || marginalized.contains(&name) {
                return Err(Error::InvalidSubgroup(format!("`{name}` given twice")));
            }
            match v.trim() {
                "-" => {
                    marginalized.insert(name);
                }
                v => {
                    fixed.insert(name, AttrValue::parse(name, v)?);
                }
            }
        }
        SubgroupSpec::new(fixed, marginalized, seeds)
    }
}

#[derive(Serialize, Deserialize)]
struct SubgroupSpecRepr {
    fixed: BTreeMap<AttrName, Value>,
    marginalized: BTreeSet<AttrName>,
    seeds: Vec<u64>,
}

impl Serialize for SubgroupSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SubgroupSpecRepr {
            fixed: self.fixed.iter().map(|(k, v)| (*k, v.to_json())).collect(),
            marginalized: self.marginalized.clone(),
            seeds: self.seeds.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SubgroupSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = SubgroupSpecRepr::deserialize(d)?;
        let fixed = repr
            .fixed
            .iter()
            .map(|(k, v)| AttrValue::from_json(*k, v).map(|val| (*k, val)))
            .collect::<Result<BTreeMap<_, _>>>()
            .map_err(serde::de::Error::custom)?;
        SubgroupSpec::new(fixed, repr.marginalized, repr.seeds).map_err(serde::de::Error::custom)
    }
}

/// One step of an asset's or scene's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl StageRecord {
    pub fn new(stage: impl Into<String>) -> Self {
        StageRecord {
            stage: stage.into(),
            backend: None,
            params: BTreeMap::new(),
            seed: None,
        }
    }

    pub fn backend(mut self, id: impl Into<String>) -> Self {
        self.backend = Some(id.into());
        self
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// RGBA object cutout. The mask is always exactly `alpha > 0` and nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAsset {
    pixels: RgbaImage,
    mask: Mask,
    provenance: Vec<StageRecord>,
}

#[derive(Serialize, Deserialize)]
struct AssetSidecar {
    width: u32,
    height: u32,
    provenance: Vec<StageRecord>,
}

impl ObjectAsset {
    pub fn new(pixels: RgbaImage, provenance: Vec<StageRecord>) -> Result<Self> {
        let mask = Mask::from_alpha(&pixels);
        if mask.is_empty() {
            return Err(Error::EmptyAsset);
        }
        Ok(ObjectAsset {
            pixels,
            mask,
            provenance,
        })
    }

    pub fn pixels(&self) -> &RgbaImage {
        &self.pixels
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn provenance(&self) -> &[StageRecord] {
        &self.provenance
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.pixels.dimensions()
    }

    pub fn with_record(mut self, record: StageRecord) -> Self {
        self.provenance.push(record);
        self
    }

    /// New pixels, same history plus `record`.
    pub fn derive(&self, pixels: RgbaImage, record: StageRecord) -> Result<Self> {
        let mut provenance = self.provenance.clone();
        provenance.push(record);
        ObjectAsset::new(pixels, provenance)
    }

    pub fn tight_bbox(&self) -> PixelBox {
        self.mask.tight_bbox().expect("asset mask is nonempty")
    }

    /// Composites the asset over a uniform color, yielding an RGB image.
    pub fn over(&self, bg: [u8; 3]) -> RgbImage {
        RgbImage::from_fn(self.pixels.width(), self.pixels.height(), |x, y| {
            let p = self.pixels.get_pixel(x, y);
            image::Rgb(crate::synth::compose::blend(p.0, bg))
        })
    }

    /// Writes `<path>` (RGBA PNG) and the JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        imageio::save_png(path, &DynamicImage::ImageRgba8(self.pixels.clone()))?;
        imageio::write_json(
            &imageio::sidecar_path(path),
            &AssetSidecar {
                width: self.pixels.width(),
                height: self.pixels.height(),
                provenance: self.provenance.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let pixels = imageio::load_rgba(path)?;
        let side: AssetSidecar = imageio::read_json(&imageio::sidecar_path(path))?;
        if (side.width, side.height) != pixels.dimensions() {
            return Err(Error::config(format!("{}: sidecar dimensions disagree with image", path.display())));
        }
        ObjectAsset::new(pixels, side.provenance)
    }
}

/// Smallest box containing every foreground pixel of `asset`.
pub fn tight_bbox(asset: &ObjectAsset) -> PixelBox {
    asset.tight_bbox()
}

/// Final composed image with its exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    image: RgbImage,
    gt_bbox: PixelBox,
    gt_class: String,
    attributes: AttributeVector,
    seed: u64,
    provenance: Vec<StageRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta {
    pub width: u32,
    pub height: u32,
    pub gt_bbox: PixelBox,
    pub gt_class: String,
    pub attributes: AttributeVector,
    pub seed: u64,
    pub provenance: Vec<StageRecord>,
}

impl SceneSample {
    pub fn new(
        image: RgbImage,
        gt_bbox: PixelBox,
        attributes: AttributeVector,
        seed: u64,
        provenance: Vec<StageRecord>,
    ) -> Result<Self> {
        let bounds = PixelBox::new(0, 0, image.width(), image.height());
        if !gt_bbox.is_well_ordered() || !bounds.contains(&gt_bbox) {
            return Err(Error::Placement(format!(
                "gt box {gt_bbox:?} outside image {}x{}",
                image.width(),
                image.height()
            )));
        }
        Ok(SceneSample {
            image,
            gt_bbox,
            gt_class: GT_CLASS.to_string(),
            attributes,
            seed,
            provenance,
        })
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn gt_bbox(&self) -> PixelBox {
        self.gt_bbox
    }

    pub fn gt_class(&self) -> &str {
        &self.gt_class
    }

    pub fn attributes(&self) -> &AttributeVector {
        &self.attributes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provenance(&self) -> &[StageRecord] {
        &self.provenance
    }

    pub fn with_record(mut self, record: StageRecord) -> Self {
        self.provenance.push(record);
        self
    }

    pub fn meta(&self) -> SceneMeta {
        SceneMeta {
            width: self.image.width(),
            height: self.image.height(),
            gt_bbox: self.gt_bbox,
            gt_class: self.gt_class.clone(),
            attributes: self.attributes.clone(),
            seed: self.seed,
            provenance: self.provenance.clone(),
        }
    }

    /// Writes `<path>` (RGB PNG) and the JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        imageio::save_png(path, &DynamicImage::ImageRgb8(self.image.clone()))?;
        imageio::write_json(&imageio::sidecar_path(path), &self.meta())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let image = imageio::load_rgb(path)?;
        let meta: SceneMeta = imageio::read_json(&imageio::sidecar_path(path))?;
        if (meta.width, meta.height) != image.dimensions() {
            return Err(Error::config(format!("{}: sidecar dimensions disagree with image", path.display())));
        }
        let mut s = SceneSample::new(image, meta.gt_bbox, meta.attributes, meta.seed, meta.provenance)?;
        s.gt_class = meta.gt_class;
        Ok(s)
    }
}

/// A detector prediction in scene pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "label")]
    pub class_label: String,
    pub score: f64,
    pub bbox: RealBox,
}

impl Detection {
    pub fn new(class_label: impl Into<String>, score: f64, bbox: RealBox) -> Self {
        Detection {
            class_label: class_label.into(),
            score,
            bbox,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::config(format!("detection score {} outside [0,1]", self.score)));
        }
        if !self.bbox.is_well_ordered() {
            return Err(Error::config(format!("detection box {:?} is not well ordered", self.bbox)));
        }
        Ok(())
    }
}

/// Verdict for one scene.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalOutcome {
    Correct,
    WrongClass { label: String },
    FalseNegative,
}

impl EvalOutcome {
    pub fn is_error(&self) -> bool {
        !matches!(self, EvalOutcome::Correct)
    }
}

/// Aggregated error statistics for one subgroup and detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub subgroup: SubgroupSpec,
    pub detector_id: String,
    pub n_samples: u64,
    pub n_errors: u64,
    #[serde(with = "rate_text")]
    pub error_rate: Rate,
    pub top_wrong_class: Option<(String, u64)>,
}

impl SubgroupResult {
    pub fn new(
        subgroup: SubgroupSpec,
        detector_id: impl Into<String>,
        n_samples: u64,
        n_errors: u64,
        top_wrong_class: Option<(String, u64)>,
    ) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::EmptySubgroup(subgroup.label()));
        }
        if n_errors > n_samples {
            return Err(Error::Precondition(format!("{n_errors} errors out of {n_samples} samples")));
        }
        if let Some((_, c)) = &top_wrong_class {
            if *c > n_errors || *c == 0 {
                return Err(Error::Precondition(format!("wrong-class count {c} vs {n_errors} errors")));
            }
        }
        Ok(SubgroupResult {
            subgroup,
            detector_id: detector_id.into(),
            n_samples,
            n_errors,
            error_rate: Rate::new(n_errors, n_samples),
            top_wrong_class,
        })
    }

    pub fn percent(&self) -> u64 {
        crate::num::percent_half_away(self.n_errors, self.n_samples)
    }
}

pub(crate) mod rate_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::num::Rate;

    pub fn serialize<S: Serializer>(r: &Rate, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&format_args!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rate, D::Error> {
        let s = String::deserialize(d)?;
        let (n, m) = s
            .split_once('/')
            .ok_or_else(|| serde::de::Error::custom(format!("rate `{s}` is not `a/b`")))?;
        let n: u64 = n.parse().map_err(serde::de::Error::custom)?;
        let m: u64 = m.parse().map_err(serde::de::Error::custom)?;
        if m == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(Rate::new(n, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgba;

    pub(crate) fn attrs() -> AttributeVector {
        AttributeVector {
            object_type: "sports car".into(),
            object_color: ObjectColor::Original,
            orientation_deg: -50.0,
            scale_factor: 6.0,
            location: [0.5, 0.5],
            background: Background::Plain("grey".into()),
        }
    }

    #[test]
    fn validation_names_the_offending_field() {
        let mut a = attrs();
        a.scale_factor = 0.5;
        match a.validate() {
            Err(Error::InvalidAttribute { field, .. }) => assert_eq!(field, "scale_factor"),
            other => panic!("{other:?}"),
        }
        let mut a = attrs();
        a.orientation_deg = 180.0;
        assert!(matches!(a.validate(), Err(Error::InvalidAttribute { field: "orientation_deg", .. })));
        let mut a = attrs();
        a.location = [0.2, 1.5];
        assert!(matches!(a.validate(), Err(Error::InvalidAttribute { field: "location", .. })));
        a.location = [0.0, 1.0];
        a.orientation_deg = -180.0;
        a.validate().unwrap();
    }

    #[test]
    fn background_text_forms() {
        assert_eq!("plain:grey".parse::<Background>().unwrap(), Background::Plain("grey".into()));
        let o: Background = "outpaint:car on a snowy street".parse().unwrap();
        assert_eq!(o.to_string(), "outpaint:car on a snowy street");
        assert!("grey".parse::<Background>().is_err());
        assert!("outpaint: ".parse::<Background>().is_err());
    }

    #[test]
    fn attribute_json_roundtrip_is_exact() {
        let mut a = attrs();
        a.orientation_deg = -0.1 - 0.2;
        a.location = [1.0 / 3.0, 0.7];
        let text = serde_json::to_string(&a).unwrap();
        let back: AttributeVector = serde_json::from_str(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.key_hash(), a.key_hash());
    }

    #[test]
    fn subgroup_invariants() {
        let mut fixed = BTreeMap::new();
        fixed.insert(AttrName::ScaleFactor, AttrValue::Number(6.0));
        let marg: BTreeSet<_> = [AttrName::ScaleFactor].into();
        assert!(SubgroupSpec::new(fixed.clone(), marg, vec![0]).is_err());
        assert!(SubgroupSpec::new(fixed.clone(), BTreeSet::new(), vec![]).is_err());
        assert!(SubgroupSpec::new(fixed.clone(), BTreeSet::new(), vec![1, 1]).is_err());
        let mut bad = fixed.clone();
        bad.insert(AttrName::Background, AttrValue::Number(3.0));
        assert!(SubgroupSpec::new(bad, BTreeSet::new(), vec![0]).is_err());
        let s = SubgroupSpec::new(fixed, [AttrName::Orientation].into(), vec![0, 1]).unwrap();
        assert!(s.matches(&attrs()));
        assert_eq!(s.label(), "scale_factor=6,orientation_deg=-");
        let back: SubgroupSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn asset_requires_foreground() {
        let img = RgbaImage::from_pixel(4, 4, Rgba([9, 9, 9, 0]));
        assert!(matches!(ObjectAsset::new(img, vec![]), Err(Error::EmptyAsset)));
    }

    #[test]
    fn asset_bbox_of_rectangle() {
        // 4x6 rectangle at offset (2,1)
        let img = RgbaImage::from_fn(12, 10, |x, y| {
            let inside = (2..6).contains(&x) && (1..7).contains(&y);
            Rgba([1, 2, 3, if inside { 255 } else { 0 }])
        });
        let a = ObjectAsset::new(img, vec![]).unwrap();
        assert_eq!(tight_bbox(&a), PixelBox::new(2, 1, 6, 7));
    }

    #[test]
    fn scene_rejects_box_outside_image() {
        let img = RgbImage::new(10, 10);
        assert!(SceneSample::new(img.clone(), PixelBox::new(5, 5, 11, 8), attrs(), 0, vec![]).is_err());
        assert!(SceneSample::new(img, PixelBox::new(5, 5, 5, 8), attrs(), 0, vec![]).is_err());
    }

    #[test]
    fn subgroup_result_counts() {
        let s = SubgroupSpec::cell(&attrs(), vec![0]).unwrap();
        let r = SubgroupResult::new(s.clone(), "d", 16, 15, Some(("airplane".into(), 15))).unwrap();
        assert_eq!(r.error_rate, Rate::new(15, 16));
        assert_eq!(r.percent(), 94);
        assert!(SubgroupResult::new(s.clone(), "d", 0, 0, None).is_err());
        assert!(SubgroupResult::new(s.clone(), "d", 4, 5, None).is_err());
        assert!(SubgroupResult::new(s, "d", 4, 2, Some(("x".into(), 3))).is_err());
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"15/16\""));
        let back: SubgroupResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn selector_roundtrips_label() {
        let mut a = attrs();
        a.location = [0.25, 0.75];
        let mut sg = SubgroupSpec::cell(&a, vec![0, 1]).unwrap();
        sg.fixed.remove(&AttrName::Background);
        sg.marginalized.insert(AttrName::Background);
        let back = SubgroupSpec::parse(&sg.label(), vec![0, 1]).unwrap();
        assert_eq!(back, sg);
        let short = SubgroupSpec::parse("scale=6,angle=-90,BG=-", vec![0]).unwrap();
        assert_eq!(short.fixed[&AttrName::Orientation], AttrValue::Number(-90.0));
        assert!(SubgroupSpec::parse("scale=6,scale=7", vec![0]).is_err());
        assert!(SubgroupSpec::parse("size=6", vec![0]).is_err());
    }
}
