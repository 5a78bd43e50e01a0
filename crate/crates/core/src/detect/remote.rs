//! Detector served over HTTP.
//!
//! Request: `{"detector_id": ..., "image": <png base64>}`.
//! Response: `{"detections": [{"label", "score", "bbox": [x1, y1, x2, y2]}]}`.

use std::time::Duration;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::Detector;
use crate::imageio;
use crate::scene::{Detection, SceneSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub detector_id: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectResponse {
    #[serde(default)]
    pub detections: Vec<Detection>,
}

pub struct RemoteDetector {
    id: String,
    endpoint: String,
    vocabulary: Vec<String>,
    agent: ureq::Agent,
}

impl RemoteDetector {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>, vocabulary: Vec<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        RemoteDetector {
            id: id.into(),
            endpoint: endpoint.into(),
            vocabulary,
            agent,
        }
    }
}

impl Detector for RemoteDetector {
    fn detector_id(&self) -> &str {
        &self.id
    }

    fn class_vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    fn detect(&self, scene: &SceneSample) -> Result<Vec<Detection>, String> {
        let image = imageio::png_base64(&DynamicImage::ImageRgb8(scene.image().clone())).map_err(|e| e.to_string())?;
        let req = DetectRequest {
            detector_id: self.id.clone(),
            image,
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&req)
            .map_err(|e| format!("request to {} failed: {e}", self.endpoint))?;
        let body: DetectResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| format!("bad response from {}: {e}", self.endpoint))?;
        Ok(body.detections)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{run_detector, DetectorAdapter};
    use crate::error::Error;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// One-shot HTTP server; `reply` of `None` never answers.
    fn serve_once(reply: Option<String>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let req: DetectRequest = serde_json::from_slice(&body).unwrap();
            assert_eq!(req.detector_id, "remote");
            match reply {
                Some(r) => {
                    let msg = format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{r}",
                        r.len()
                    );
                    stream.write_all(msg.as_bytes()).unwrap();
                }
                None => std::thread::sleep(Duration::from_secs(3)),
            }
        });
        format!("http://{addr}/detect")
    }

    fn adapter(url: String, timeout_ms: u64) -> DetectorAdapter {
        let d = RemoteDetector::new("remote", url, crate::detect::default_vocabulary(), Duration::from_millis(timeout_ms));
        DetectorAdapter::new(Arc::new(d), 0.0, 1).unwrap()
    }

    #[test]
    fn parses_detections() {
        let url = serve_once(Some(r#"{"detections":[{"label":"truck","score":0.7,"bbox":[10,10,50,50]}]}"#.into()));
        let dets = run_detector(&adapter(url, 5000), &crate::detect::tests::sample()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class_label, "truck");
    }

    #[test]
    fn timeout_is_a_detector_error() {
        let url = serve_once(None);
        match run_detector(&adapter(url, 300), &crate::detect::tests::sample()) {
            Err(Error::Detector { detector_id, .. }) => assert_eq!(detector_id, "remote"),
            other => panic!("{other:?}"),
        }
    }
}
