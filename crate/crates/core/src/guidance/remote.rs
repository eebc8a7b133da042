use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use super::{GuidanceError, GuidanceProvider, NoiseRequest, ViewClassifier};
use crate::image::Image;

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_GUIDANCE_SCALE: f64 = 7.5;

/// Row-major little-endian `f32`, base64.
pub fn encode_image(img: &Image) -> String {
    let mut bytes = Vec::with_capacity(img.data.len() * 4);
    for &v in &img.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_image(
    text: &str,
    width: usize,
    height: usize,
    channels: usize,
) -> Result<Image, GuidanceError> {
    let bytes = B64
        .decode(text)
        .map_err(|e| GuidanceError::Protocol(format!("payload is not base64: {e}")))?;
    let expected = width * height * channels;
    if bytes.len() != expected * 4 {
        let got = bytes.len() / 4;
        return Err(GuidanceError::ShapeMismatch {
            expected: [height, width, channels],
            got: [got / (width * channels).max(1), width, channels],
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok(Image::from_data(width, height, channels, data).expect("length checked"))
}

#[derive(Debug)]
struct Gate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Client for a remote noise-prediction service.
#[derive(Debug)]
pub struct RemoteProvider {
    base: String,
    agent: ureq::Agent,
    guidance_scale: f64,
    gate: Gate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteOptions {
    pub timeout: Duration,
    pub guidance_scale: f64,
    pub max_in_flight: usize,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            max_in_flight: 4,
        }
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    use std::error::Error as _;
    let mut source = t.source();
    while let Some(s) = source {
        if let Some(io) = s.downcast_ref::<std::io::Error>() {
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) {
                return true;
            }
        }
        source = s.source();
    }
    t.to_string().contains("timed out")
}

fn service_error(body: &Value) -> Option<GuidanceError> {
    let err = body.get("error")?;
    let code = match err.get("code") {
        Some(Value::String(s)) => s.clone(),
        Some(v) => v.to_string(),
        None => "unknown".into(),
    };
    let message = err
        .get("message")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    if code == "protocol_version" || code == "version_mismatch" {
        return Some(GuidanceError::ProtocolVersion {
            expected: PROTOCOL_VERSION,
            got: message,
        });
    }
    Some(GuidanceError::Service { code, message })
}

fn check_version(body: &Value) -> Result<(), GuidanceError> {
    match body.get("version").and_then(Value::as_u64) {
        Some(PROTOCOL_VERSION) => Ok(()),
        Some(v) => Err(GuidanceError::ProtocolVersion {
            expected: PROTOCOL_VERSION,
            got: v.to_string(),
        }),
        None => Err(GuidanceError::ProtocolVersion {
            expected: PROTOCOL_VERSION,
            got: "missing".into(),
        }),
    }
}

impl RemoteProvider {
    /// Connects and performs the health handshake.
    pub fn connect(endpoint: &str, options: RemoteOptions) -> Result<Self, GuidanceError> {
        if options.max_in_flight == 0 {
            return Err(GuidanceError::InvalidConfig(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if !(options.guidance_scale.is_finite() && options.guidance_scale > 0.0) {
            return Err(GuidanceError::InvalidConfig(
                "guidance_scale must be positive".into(),
            ));
        }
        let provider = Self {
            base: endpoint.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(options.timeout).build(),
            guidance_scale: options.guidance_scale,
            gate: Gate {
                limit: options.max_in_flight,
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
        };
        provider.health()?;
        Ok(provider)
    }

    pub fn guidance_scale(&self) -> f64 {
        self.guidance_scale
    }

    pub fn health(&self) -> Result<(), GuidanceError> {
        let body = self.call("/v1/health", None)?;
        check_version(&body)
    }

    fn call(&self, path: &str, body: Option<Value>) -> Result<Value, GuidanceError> {
        let _permit = self.gate.acquire();
        let url = format!("{}{}", self.base, path);
        let result = match body {
            Some(b) => self.agent.post(&url).send_json(b),
            None => self.agent.get(&url).call(),
        };
        let response = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let body: Value = r.into_json().unwrap_or(Value::Null);
                return Err(service_error(&body).unwrap_or(GuidanceError::Service {
                    code: code.to_string(),
                    message: format!("HTTP {code} from {path}"),
                }));
            }
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => {
                return Err(GuidanceError::Timeout(t.to_string()))
            }
            Err(ureq::Error::Transport(t)) => return Err(GuidanceError::Transport(t.to_string())),
        };
        let body: Value = response.into_json().map_err(|e| {
            if e.kind() == std::io::ErrorKind::TimedOut
                || e.kind() == std::io::ErrorKind::WouldBlock
            {
                GuidanceError::Timeout(e.to_string())
            } else {
                GuidanceError::Protocol(format!("response is not JSON: {e}"))
            }
        })?;
        if let Some(e) = service_error(&body) {
            return Err(e);
        }
        Ok(body)
    }
}

impl GuidanceProvider for RemoteProvider {
    fn predict_noise(&self, r: &NoiseRequest<'_>) -> Result<Image, GuidanceError> {
        let (w, h) = (r.image.width, r.image.height);
        let body = json!({
            "version": PROTOCOL_VERSION,
            "prompt": r.prompt,
            "t": r.t,
            "guidance_scale": self.guidance_scale,
            "image": encode_image(r.image),
            "noised": encode_image(r.noised),
            "height": h,
            "width": w,
        });
        let resp = self.call("/v1/predict_noise", Some(body))?;
        check_version(&resp)?;
        let dims = |k: &str, default: usize| {
            resp.get(k)
                .and_then(Value::as_u64)
                .map_or(default, |v| v as usize)
        };
        let (rh, rw) = (dims("height", h), dims("width", w));
        if (rh, rw) != (h, w) {
            return Err(GuidanceError::ShapeMismatch {
                expected: [h, w, 3],
                got: [rh, rw, 3],
            });
        }
        let noise = resp
            .get("noise")
            .and_then(Value::as_str)
            .ok_or_else(|| GuidanceError::Protocol("response has no noise field".into()))?;
        let img = decode_image(noise, w, h, r.image.channels)?;
        if !img.is_finite() {
            return Err(GuidanceError::NonFinite("predicted noise".into()));
        }
        Ok(img)
    }
}

impl ViewClassifier for RemoteProvider {
    fn classify(&self, image: &Image, candidates: &[&str]) -> Result<String, GuidanceError> {
        let body = json!({
            "version": PROTOCOL_VERSION,
            "image": encode_image(image),
            "height": image.height,
            "width": image.width,
            "candidates": candidates,
        });
        let resp = self.call("/v1/classify_view", Some(body))?;
        check_version(&resp)?;
        let word = resp
            .get("word")
            .and_then(Value::as_str)
            .ok_or_else(|| GuidanceError::Protocol("response has no word field".into()))?;
        if !candidates.contains(&word) {
            return Err(GuidanceError::Protocol(format!(
                "classifier chose unknown word {word:?}"
            )));
        }
        Ok(word.to_string())
    }
}
