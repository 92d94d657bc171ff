use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::PromptRequest;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    template_id: super::TemplateId,
    model: String,
    temperature: f32,
    prompt: String,
    text: String,
}

/// One JSON file per response under `dir`, named `<cache key>.json`.
#[derive(Clone, Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Looks up a response. Unreadable or mismatched entries are moved aside
    /// to `<key>.json.corrupt` and reported as a miss.
    pub fn get(&self, request: &PromptRequest) -> Option<String> {
        let key = request.cache_key();
        let path = self.entry_path(&key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                warn!("cache read failed for {}: {e}", path.display());
                return None;
            }
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.key == key && entry.prompt == request.rendered_prompt => {
                Some(entry.text)
            }
            _ => {
                let quarantine = self.dir.join(format!("{key}.json.corrupt"));
                warn!("quarantining corrupt cache entry {}", path.display());
                if fs::rename(&path, &quarantine).is_err() {
                    let _ = fs::remove_file(&path);
                }
                None
            }
        }
    }

    /// Stores a response with write-then-rename, so concurrent writers of one
    /// key leave a complete file behind.
    pub fn put(&self, request: &PromptRequest, text: &str) -> std::io::Result<()> {
        let key = request.cache_key();
        let entry = CacheEntry {
            key: key.clone(),
            template_id: request.template_id,
            model: request.model.clone(),
            temperature: request.temperature,
            prompt: request.rendered_prompt.clone(),
            text: text.to_string(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).map_err(std::io::Error::other)?;
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, self.entry_path(&key)).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })
    }

    pub fn remove(&self, request: &PromptRequest) {
        let _ = fs::remove_file(self.entry_path(&request.cache_key()));
    }
}
