use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};

use super::{initial_canvas, EditRequest, EditSession, Inference, SamplerOverrides, SessionState};
use crate::error::{Error, Result};
use crate::image::{io, RasterImage};

#[derive(Debug, Serialize, Deserialize)]
struct RequestRecord {
    prompt: String,
    sampler: SamplerOverrides,
    has_reference: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct SessionRecord {
    id: String,
    created: u64,
    updated: u64,
    edits: usize,
    has_pending: bool,
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| json_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

fn write_request(dir: &Path, req: &EditRequest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::save_mask_png(&req.mask, dir.join("mask.png"))?;
    io::save_mask_png(&req.sketch, dir.join("sketch.png"))?;
    if let Some(r) = &req.reference {
        io::save_png(r, dir.join("reference.png"))?;
    }
    let rec = RequestRecord {
        prompt: req.prompt.clone(),
        sampler: req.sampler.clone(),
        has_reference: req.reference.is_some(),
    };
    write_json(&dir.join("request.json"), &rec)
}

fn read_request(dir: &Path) -> Result<EditRequest> {
    let rec: RequestRecord = read_json(&dir.join("request.json"))?;
    Ok(EditRequest {
        mask: io::load_mask_png(dir.join("mask.png"))?,
        sketch: io::load_mask_png(dir.join("sketch.png"))?,
        reference: rec.has_reference.then(|| io::load_png(dir.join("reference.png"))).transpose()?,
        prompt: rec.prompt,
        sampler: rec.sampler,
    })
}

/// Directory layout per session: `initial.png`, `prev.png`, `curr.png`,
/// `session.json`, `log.jsonl` (one line per confirmed edit, whose inputs
/// live in `edits/<n>/`), and `pending/` with `temp.png` while a proposal
/// is open.
fn persist(root: &Path, s: &EditSession) -> Result<()> {
    let dir = root.join(&s.id);
    fs::create_dir_all(dir.join("edits")).map_err(|e| Error::io(&dir, e))?;
    io::save_png(&s.initial, dir.join("initial.png"))?;
    io::save_png(&s.prev, dir.join("prev.png"))?;
    io::save_png(&s.curr, dir.join("curr.png"))?;
    let mut log = String::new();
    for (n, req) in s.log.iter().enumerate() {
        let edit_dir = dir.join("edits").join(format!("{n:05}"));
        if !edit_dir.join("request.json").exists() {
            write_request(&edit_dir, req)?;
        }
        let line = serde_json::json!({ "index": n, "prompt": req.prompt, "sampler": req.sampler });
        log.push_str(&format!("{line}\n"));
    }
    let log_path = dir.join("log.jsonl");
    fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    let pending = dir.join("pending");
    if pending.exists() {
        fs::remove_dir_all(&pending).map_err(|e| Error::io(&pending, e))?;
    }
    if let (Some(req), Some(temp)) = (&s.pending, &s.temp) {
        write_request(&pending, req)?;
        io::save_png(temp, pending.join("temp.png"))?;
    }
    let rec = SessionRecord {
        id: s.id.clone(),
        created: s.created,
        updated: s.updated,
        edits: s.log.len(),
        has_pending: s.pending.is_some(),
    };
    write_json(&dir.join("session.json"), &rec)
}

fn restore(dir: &Path) -> Result<EditSession> {
    let rec: SessionRecord = read_json(&dir.join("session.json"))?;
    let log = (0..rec.edits)
        .map(|n| read_request(&dir.join("edits").join(format!("{n:05}"))))
        .collect::<Result<Vec<_>>>()?;
    let (pending, temp) = if rec.has_pending {
        let p = dir.join("pending");
        (Some(read_request(&p)?), Some(io::load_png(p.join("temp.png"))?))
    } else {
        (None, None)
    };
    Ok(EditSession {
        id: rec.id,
        prev: io::load_png(dir.join("prev.png"))?,
        curr: io::load_png(dir.join("curr.png"))?,
        temp,
        pending,
        initial: io::load_png(dir.join("initial.png"))?,
        log,
        created: rec.created,
        updated: rec.updated,
    })
}

/// Thread-safe registry of sessions with one lock per session and optional
/// on-disk persistence.
pub struct SessionManager {
    sessions: RwLock<HashMap<String, Arc<Mutex<EditSession>>>>,
    root: Option<PathBuf>,
    inference: Arc<dyn Inference>,
}

impl SessionManager {
    /// Restores every session found under `root` when given.
    pub fn new(inference: Arc<dyn Inference>, root: Option<PathBuf>) -> Result<Self> {
        let mut sessions = HashMap::new();
        if let Some(root) = &root {
            fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
            let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
            for entry in entries.filter_map(|e| e.ok()) {
                let dir = entry.path();
                if dir.join("session.json").exists() {
                    let s = restore(&dir)?;
                    sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
                }
            }
        }
        Ok(Self {
            sessions: RwLock::new(sessions),
            root,
            inference,
        })
    }

    pub fn inference(&self) -> &Arc<dyn Inference> {
        &self.inference
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn create(&self, source: Option<RasterImage>, shape: Option<(usize, usize)>) -> Result<String> {
        let canvas = initial_canvas(source, shape)?;
        let mut map = self.sessions.write().expect("session map lock");
        let id = loop {
            let id = format!("{:016x}", rand::random::<u64>());
            if !map.contains_key(&id) {
                break id;
            }
        };
        let session = EditSession::new(id.clone(), canvas);
        if let Some(root) = &self.root {
            persist(root, &session)?;
        }
        map.insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<EditSession>>> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    fn with<T>(&self, id: &str, f: impl FnOnce(&mut EditSession, &dyn Inference) -> Result<T>) -> Result<T> {
        let handle = self.handle(id)?;
        let mut guard: MutexGuard<EditSession> = handle.lock().unwrap_or_else(|p| p.into_inner());
        let out = f(&mut guard, self.inference.as_ref())?;
        if let Some(root) = &self.root {
            persist(root, &guard)?;
        }
        Ok(out)
    }

    pub fn submit(&self, id: &str, req: EditRequest) -> Result<RasterImage> {
        self.with(id, |s, inf| s.submit(req, inf).cloned())
    }

    pub fn confirm(&self, id: &str) -> Result<RasterImage> {
        self.with(id, |s, _| s.confirm().cloned())
    }

    pub fn reject(&self, id: &str) -> Result<RasterImage> {
        self.with(id, |s, _| s.reject().cloned())
    }

    pub fn canvas(&self, id: &str) -> Result<RasterImage> {
        Ok(self.snapshot(id)?.curr)
    }

    pub fn state(&self, id: &str) -> Result<SessionState> {
        Ok(self.snapshot(id)?.state())
    }

    /// A copy of the whole session.
    pub fn snapshot(&self, id: &str) -> Result<EditSession> {
        let handle = self.handle(id)?;
        let guard = handle.lock().unwrap_or_else(|p| p.into_inner());
        Ok(guard.clone())
    }
}
