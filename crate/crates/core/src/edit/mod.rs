//! Interactive editing sessions.
//!
//! A session holds the previous and current canvas. Submitting an edit
//! stores a proposal without touching the current canvas; confirming it
//! moves current to previous and the proposal to current; rejecting it
//! discards the proposal. A new submission replaces a pending one.
//! Canvases are kept at 8-bit precision so PNG storage is lossless.

mod inference;
mod store;

pub use inference::{DiffusionInference, Inference, StubInference};
pub use store::SessionManager;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::diffusion::SamplerConfig;
use crate::error::{Error, Result};
use crate::image::io::{from_byte, to_byte};
use crate::image::{BinaryMask, RasterImage};

/// Rounds every value to the nearest 8-bit level.
pub fn quantize(img: &RasterImage) -> RasterImage {
    let data = img.data().iter().map(|&v| from_byte(to_byte(v))).collect();
    RasterImage::new(img.height(), img.width(), img.channels(), data).expect("8-bit levels are in range")
}

/// Per-request sampler settings; unset fields use the backend defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SamplerOverrides {
    pub fn apply(&self, base: &SamplerConfig) -> SamplerConfig {
        SamplerConfig {
            steps: self.steps.unwrap_or(base.steps),
            guidance: self.guidance.unwrap_or(base.guidance),
            seed: self.seed.unwrap_or(base.seed),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub mask: BinaryMask,
    pub sketch: BinaryMask,
    pub reference: Option<RasterImage>,
    pub prompt: String,
    pub sampler: SamplerOverrides,
}

impl EditRequest {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.mask.shape() != (height, width) {
            return Err(Error::invalid(format!(
                "mask is {:?}, canvas is {height}x{width}",
                self.mask.shape()
            )));
        }
        if self.sketch.shape() != (height, width) {
            return Err(Error::invalid(format!(
                "sketch is {:?}, canvas is {height}x{width}",
                self.sketch.shape()
            )));
        }
        if self.mask.is_empty() {
            return Err(Error::invalid("mask is empty"));
        }
        if let Some(r) = &self.reference {
            if r.height() == 0 || r.width() == 0 {
                return Err(Error::invalid("reference image is empty"));
            }
        }
        if let Some(0) = self.sampler.steps {
            return Err(Error::invalid("sampler steps must be positive"));
        }
        if let Some(g) = self.sampler.guidance {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("guidance {g} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditSession {
    pub id: String,
    pub prev: RasterImage,
    pub curr: RasterImage,
    pub temp: Option<RasterImage>,
    pub pending: Option<EditRequest>,
    pub initial: RasterImage,
    /// Confirmed edits, oldest first.
    pub log: Vec<EditRequest>,
    pub created: u64,
    pub updated: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub has_pending: bool,
    pub shape: [usize; 3],
    pub edit_count: usize,
}

/// Initial canvas: the source, or white of the given `[h, w]`.
pub fn initial_canvas(source: Option<RasterImage>, shape: Option<(usize, usize)>) -> Result<RasterImage> {
    match (source, shape) {
        (Some(src), None) => Ok(quantize(&src.to_rgb())),
        (None, Some((h, w))) => RasterImage::filled(h, w, 3, 1.0),
        _ => Err(Error::invalid("supply exactly one of a source image or a canvas shape")),
    }
}

impl EditSession {
    pub fn new(id: String, canvas: RasterImage) -> Self {
        let t = now();
        Self {
            id,
            prev: canvas.clone(),
            curr: canvas.clone(),
            temp: None,
            pending: None,
            initial: canvas,
            log: Vec::new(),
            created: t,
            updated: t,
        }
    }

    pub fn state(&self) -> SessionState {
        let (h, w, c) = self.curr.shape();
        SessionState {
            has_pending: self.pending.is_some(),
            shape: [h, w, c],
            edit_count: self.log.len(),
        }
    }

    /// Validates and runs inference on the current canvas; the result
    /// becomes the pending proposal, replacing any earlier one.
    pub fn submit(&mut self, req: EditRequest, inference: &dyn Inference) -> Result<&RasterImage> {
        req.validate(self.curr.height(), self.curr.width())?;
        let temp = inference.infer(&self.curr, &req)?;
        if temp.shape() != self.curr.shape() {
            return Err(Error::invalid("inference changed the canvas shape"));
        }
        self.temp = Some(temp);
        self.pending = Some(req);
        self.updated = now();
        Ok(self.temp.as_ref().expect("just stored"))
    }

    pub fn confirm(&mut self) -> Result<&RasterImage> {
        let (Some(temp), Some(req)) = (self.temp.take(), self.pending.take()) else {
            return Err(Error::Conflict(format!("session {} has no pending edit", self.id)));
        };
        self.prev = std::mem::replace(&mut self.curr, temp);
        self.log.push(req);
        self.updated = now();
        Ok(&self.curr)
    }

    pub fn reject(&mut self) -> Result<&RasterImage> {
        if self.pending.is_none() {
            return Err(Error::Conflict(format!("session {} has no pending edit", self.id)));
        }
        self.temp = None;
        self.pending = None;
        self.updated = now();
        Ok(&self.curr)
    }
}

/// Folds confirmed edits over the initial canvas.
pub fn replay(initial: &RasterImage, log: &[EditRequest], inference: &dyn Inference) -> Result<RasterImage> {
    log.iter().try_fold(initial.clone(), |canvas, req| inference.infer(&canvas, req))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(h: usize, w: usize, seed: u64) -> EditRequest {
        EditRequest {
            mask: BinaryMask::from_fn(h, w, |y, x| y >= 2 && x >= 3 && y < h - 1).unwrap(),
            sketch: BinaryMask::from_fn(h, w, |y, x| y == 4 && x >= 3).unwrap(),
            reference: None,
            prompt: "a boat".into(),
            sampler: SamplerOverrides {
                seed: Some(seed),
                ..Default::default()
            },
        }
    }

    fn session() -> EditSession {
        let canvas = RasterImage::from_fn(12, 10, 3, |y, x, c| from_byte(((y * 20 + x * 7 + c * 50) % 256) as u8)).unwrap();
        EditSession::new("s".into(), initial_canvas(Some(canvas), None).unwrap())
    }

    #[test]
    fn initial_canvas_rules() {
        let white = initial_canvas(None, Some((64, 64))).unwrap();
        assert!(white.data().iter().all(|&v| v == 1.0));
        assert_eq!(white.shape(), (64, 64, 3));
        assert!(initial_canvas(None, None).is_err());
        let src = RasterImage::filled(4, 4, 3, from_byte(9)).unwrap();
        assert!(initial_canvas(Some(src.clone()), Some((4, 4))).is_err());
        assert_eq!(initial_canvas(Some(src.clone()), None).unwrap(), src);
    }

    #[test]
    fn submit_confirm_reject() {
        let stub = StubInference::default();
        let mut s = session();
        let before = s.curr.clone();
        let temp = s.submit(request(12, 10, 1), &stub).unwrap().clone();
        assert_eq!(s.curr, before);
        assert_ne!(temp, before);
        s.confirm().unwrap();
        assert_eq!(s.prev, before);
        assert_eq!(s.curr, temp);
        assert!(matches!(s.confirm(), Err(Error::Conflict(_))));
        assert!(matches!(s.reject(), Err(Error::Conflict(_))));
        let m = &s.log[0].mask;
        for y in 0..12 {
            for x in 0..10 {
                if !m.get(y, x) {
                    assert_eq!(s.curr.pixel(y, x), s.prev.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn reject_then_resubmit_is_identical() {
        let stub = StubInference::default();
        let mut s = session();
        let a = s.submit(request(12, 10, 5), &stub).unwrap().clone();
        let curr = s.curr.clone();
        s.reject().unwrap();
        assert_eq!(s.curr, curr);
        let b = s.submit(request(12, 10, 5), &stub).unwrap().clone();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_requests_rejected_before_inference() {
        let stub = StubInference::default();
        let mut s = session();
        let mut r = request(12, 10, 0);
        r.mask = BinaryMask::zeros(12, 10).unwrap();
        assert!(matches!(s.submit(r, &stub), Err(Error::InvalidArgument(_))));
        assert!(s.submit(request(8, 8, 0), &stub).is_err());
        assert!(s.pending.is_none());
    }

    #[test]
    fn log_replays_to_current() {
        let stub = StubInference::default();
        let mut s = session();
        for seed in 0..4 {
            s.submit(request(12, 10, seed), &stub).unwrap();
            if seed % 2 == 0 {
                s.confirm().unwrap();
            } else {
                s.reject().unwrap();
            }
        }
        assert_eq!(s.log.len(), 2);
        assert_eq!(replay(&s.initial, &s.log, &stub).unwrap(), s.curr);
    }
}
