//! Stage adapters, the backend registry and the remote stage protocol.
//!
//! Every generative stage goes through [`StageBackend::call`] with a
//! [`StageRequest`]; the remote backend simply ships that request as JSON
//! (`{stage_kind, seed, config, images: [{name, png_base64}]}`) and reads
//! back `{images: [...], text?, error?}`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::imageio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Segment,
    Recolor,
    RotateView,
    Upscale,
    Outpaint,
    Caption,
}

impl StageKind {
    pub const ALL: [StageKind; 6] = [
        StageKind::Segment,
        StageKind::Recolor,
        StageKind::RotateView,
        StageKind::Upscale,
        StageKind::Outpaint,
        StageKind::Caption,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Segment => "segment",
            StageKind::Recolor => "recolor",
            StageKind::RotateView => "rotate_view",
            StageKind::Upscale => "upscale",
            StageKind::Outpaint => "outpaint",
            StageKind::Caption => "caption",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which backend runs a stage, and with what settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAdapter {
    pub stage_kind: StageKind,
    pub backend_id: String,
    #[serde(default)]
    pub config: BTreeMap<String, Value>,
}

impl StageAdapter {
    pub fn new(stage_kind: StageKind, backend_id: impl Into<String>) -> Self {
        StageAdapter {
            stage_kind,
            backend_id: backend_id.into(),
            config: BTreeMap::new(),
        }
    }

    pub fn reference(stage_kind: StageKind) -> Self {
        StageAdapter::new(stage_kind, super::reference::REFERENCE_ID)
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.config.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedImage {
    pub name: String,
    pub image: DynamicImage,
}

impl NamedImage {
    pub fn new(name: impl Into<String>, image: DynamicImage) -> Self {
        NamedImage {
            name: name.into(),
            image,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRequest {
    pub stage_kind: StageKind,
    pub seed: u64,
    pub config: BTreeMap<String, Value>,
    pub images: Vec<NamedImage>,
}

impl StageRequest {
    pub fn image(&self, name: &str) -> std::result::Result<&DynamicImage, String> {
        self.images
            .iter()
            .find(|i| i.name == name)
            .map(|i| &i.image)
            .ok_or_else(|| format!("request has no image `{name}`"))
    }

    pub fn config_str(&self, key: &str) -> Option<&str> {
        self.config.get(key).and_then(Value::as_str)
    }

    pub fn config_f64(&self, key: &str) -> Option<f64> {
        self.config.get(key).and_then(Value::as_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageResponse {
    pub images: Vec<NamedImage>,
    pub text: Option<String>,
}

impl StageResponse {
    pub fn image(image: impl Into<String>, img: DynamicImage) -> Self {
        StageResponse {
            images: vec![NamedImage::new(image, img)],
            text: None,
        }
    }

    pub fn take(&mut self, name: &str) -> Option<DynamicImage> {
        let i = self.images.iter().position(|i| i.name == name)?;
        Some(self.images.remove(i).image)
    }
}

/// A stage implementation. Backends either tolerate concurrent calls
/// (`reentrant`) or are serialized by the registry.
pub trait StageBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn supports(&self, kind: StageKind) -> bool;

    fn reentrant(&self) -> bool {
        true
    }

    /// Version string recorded in sweep manifests.
    fn version(&self) -> String {
        "1".to_string()
    }

    fn call(&self, request: &StageRequest) -> std::result::Result<StageResponse, String>;
}

struct Registered {
    backend: Arc<dyn StageBackend>,
    flight: Option<Mutex<()>>,
}

/// Backends by id. Lookups check the adapter's stage kind.
#[derive(Default)]
pub struct BackendRegistry {
    backends: HashMap<String, Registered>,
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.backends.keys().collect();
        ids.sort();
        f.debug_struct("BackendRegistry").field("backends", &ids).finish()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the deterministic reference backends.
    pub fn with_reference() -> Self {
        let mut r = BackendRegistry::new();
        r.register(Arc::new(super::reference::ReferenceBackend::default()));
        r
    }

    pub fn register(&mut self, backend: Arc<dyn StageBackend>) {
        let flight = (!backend.reentrant()).then(|| Mutex::new(()));
        self.backends
            .insert(backend.backend_id().to_string(), Registered { backend, flight });
    }

    pub fn contains(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    /// Checks that the adapter names a registered backend for its stage kind.
    pub fn check(&self, adapter: &StageAdapter) -> Result<()> {
        let reg = self.backends.get(&adapter.backend_id).ok_or_else(|| {
            Error::config(format!(
                "no backend `{}` registered for stage `{}`",
                adapter.backend_id, adapter.stage_kind
            ))
        })?;
        if !reg.backend.supports(adapter.stage_kind) {
            return Err(Error::config(format!(
                "backend `{}` does not implement stage `{}`",
                adapter.backend_id, adapter.stage_kind
            )));
        }
        Ok(())
    }

    pub fn version_of(&self, id: &str) -> Option<String> {
        self.backends.get(id).map(|r| r.backend.version())
    }

    /// Runs one stage call; failures come back as [`Error::Stage`].
    pub fn call(&self, adapter: &StageAdapter, seed: u64, images: Vec<NamedImage>) -> Result<StageResponse> {
        self.check(adapter)?;
        let reg = &self.backends[&adapter.backend_id];
        let request = StageRequest {
            stage_kind: adapter.stage_kind,
            seed,
            config: adapter.config.clone(),
            images,
        };
        let _guard = reg.flight.as_ref().map(|m| m.lock().unwrap_or_else(|e| e.into_inner()));
        reg.backend
            .call(&request)
            .map_err(|msg| Error::stage(adapter.stage_kind.as_str(), &adapter.backend_id, msg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub name: String,
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireStageRequest {
    pub stage_kind: StageKind,
    pub seed: u64,
    pub config: BTreeMap<String, Value>,
    pub images: Vec<WireImage>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WireStageResponse {
    #[serde(default)]
    pub images: Vec<WireImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn to_wire(images: &[NamedImage]) -> Result<Vec<WireImage>> {
    images
        .iter()
        .map(|i| {
            Ok(WireImage {
                name: i.name.clone(),
                png_base64: imageio::png_base64(&i.image)?,
            })
        })
        .collect()
}

fn from_wire(images: &[WireImage]) -> Result<Vec<NamedImage>> {
    images
        .iter()
        .map(|w| Ok(NamedImage::new(w.name.clone(), imageio::from_png_base64(&w.png_base64)?)))
        .collect()
}

impl WireStageRequest {
    pub fn encode(req: &StageRequest) -> Result<Self> {
        Ok(WireStageRequest {
            stage_kind: req.stage_kind,
            seed: req.seed,
            config: req.config.clone(),
            images: to_wire(&req.images)?,
        })
    }

    pub fn decode(&self) -> Result<StageRequest> {
        Ok(StageRequest {
            stage_kind: self.stage_kind,
            seed: self.seed,
            config: self.config.clone(),
            images: from_wire(&self.images)?,
        })
    }
}

impl WireStageResponse {
    pub fn encode(resp: &std::result::Result<StageResponse, String>) -> Result<Self> {
        Ok(match resp {
            Ok(r) => WireStageResponse {
                images: to_wire(&r.images)?,
                text: r.text.clone(),
                error: None,
            },
            Err(e) => WireStageResponse {
                error: Some(e.clone()),
                ..Default::default()
            },
        })
    }

    pub fn decode(&self) -> std::result::Result<StageResponse, String> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        Ok(StageResponse {
            images: from_wire(&self.images).map_err(|e| e.to_string())?,
            text: self.text.clone(),
        })
    }
}

/// Stage backend reached over HTTP with the JSON stage protocol.
pub struct RemoteStageBackend {
    id: String,
    endpoint: String,
    kinds: Vec<StageKind>,
    single_flight: bool,
    agent: ureq::Agent,
}

impl RemoteStageBackend {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>, kinds: Vec<StageKind>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteStageBackend {
            id: id.into(),
            endpoint: endpoint.into(),
            kinds,
            single_flight: false,
            agent,
        }
    }

    /// Declares the remote service unable to handle concurrent requests.
    pub fn single_flight(mut self, yes: bool) -> Self {
        self.single_flight = yes;
        self
    }
}

impl StageBackend for RemoteStageBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn supports(&self, kind: StageKind) -> bool {
        self.kinds.contains(&kind)
    }

    fn reentrant(&self) -> bool {
        !self.single_flight
    }

    fn version(&self) -> String {
        format!("remote:{}", self.endpoint)
    }

    fn call(&self, request: &StageRequest) -> std::result::Result<StageResponse, String> {
        let wire = WireStageRequest::encode(request).map_err(|e| e.to_string())?;
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&wire)
            .map_err(|e| format!("request to {} failed: {e}", self.endpoint))?;
        let status = resp.status();
        let body: WireStageResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| format!("bad response from {} (status {status}): {e}", self.endpoint))?;
        body.decode()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgba, RgbaImage};

    #[test]
    fn wire_roundtrip_is_bit_exact() {
        let img = RgbaImage::from_fn(7, 5, |x, y| Rgba([x as u8, y as u8, 200, (x * y) as u8]));
        let req = StageRequest {
            stage_kind: StageKind::Recolor,
            seed: 42,
            config: [("color".to_string(), Value::from("green"))].into(),
            images: vec![NamedImage::new("asset", DynamicImage::ImageRgba8(img.clone()))],
        };
        let wire = WireStageRequest::encode(&req).unwrap();
        let text = serde_json::to_string(&wire).unwrap();
        assert!(text.contains("\"stage_kind\":\"recolor\""));
        let back: WireStageRequest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.decode().unwrap(), req);

        let err = WireStageResponse::encode(&Err("boom".into())).unwrap();
        assert_eq!(err.decode(), Err("boom".to_string()));
    }

    #[test]
    fn registry_checks_kind_and_id() {
        let reg = BackendRegistry::with_reference();
        reg.check(&StageAdapter::reference(StageKind::Segment)).unwrap();
        assert!(reg.check(&StageAdapter::new(StageKind::Segment, "sam-gpu")).is_err());
    }
}
