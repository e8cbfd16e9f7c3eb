use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatResponse, GatewayError};

#[derive(Serialize, Deserialize)]
struct Record {
    digest: String,
    response: ChatResponse,
}

/// Append-only JSONL map from request digest to response. Later records for
/// the same digest win when the file is reloaded.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, ChatResponse>>,
    file: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let err = |message: String| GatewayError::Cache {
            path: path.display().to_string(),
            message,
        };
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
            let lines: Vec<&str> = text.lines().collect();
            for (idx, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Record>(line) {
                    Ok(r) => {
                        entries.insert(r.digest, r.response);
                    }
                    // a torn final line from an interrupted run is dropped
                    Err(_) if idx + 1 == lines.len() && !text.ends_with('\n') => {
                        log::warn!("{}: ignoring truncated final record", path.display());
                    }
                    Err(e) => return Err(err(format!("line {}: {e}", idx + 1))),
                }
            }
        } else if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| err(e.to_string()))?;
        if path.metadata().map(|m| m.len() > 0).unwrap_or(false)
            && !fs::read(path).map(|b| b.ends_with(b"\n")).unwrap_or(true)
        {
            file.write_all(b"\n").map_err(|e| err(e.to_string()))?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Option<ChatResponse> {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(digest)
            .cloned()
    }

    pub fn put(&self, digest: String, response: ChatResponse) -> Result<(), GatewayError> {
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = file.as_mut() {
            let mut line = serde_json::to_string(&Record {
                digest: digest.clone(),
                response: response.clone(),
            })
            .expect("cache record serializes");
            line.push('\n');
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| GatewayError::Cache {
                    path: self
                        .path
                        .as_ref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_default(),
                    message: e.to_string(),
                })?;
        }
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(digest, response);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::Usage;

    fn resp(text: &str) -> ChatResponse {
        ChatResponse {
            text: text.into(),
            model: "m".into(),
            usage: Usage::default(),
        }
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.jsonl");
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put("d1".into(), resp("one \u{2014} \"quoted\"\n")).unwrap();
            c.put("d2".into(), resp("two")).unwrap();
            c.put("d1".into(), resp("uno")).unwrap();
        }
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("d1").unwrap().text, "uno");
        assert_eq!(c.get("d2").unwrap().text, "two");
    }

    #[test]
    fn truncated_tail_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put("d1".into(), resp("one")).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"digest\":\"d2\",\"resp").unwrap();
        drop(f);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        c.put("d3".into(), resp("three")).unwrap();
        drop(c);
        // the torn line stays, but appends start on a fresh line
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn corrupt_middle_line_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        fs::write(&path, "garbage\n{\"digest\":\"a\",\"response\":{\"text\":\"x\",\"model\":\"m\"}}\n").unwrap();
        assert!(ResponseCache::open(&path).is_err());
    }
}
