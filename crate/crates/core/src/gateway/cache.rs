//! Content-addressed response cache, one human-inspectable JSON file per
//! entry under `<root>/<first-2-hex>/<key>.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, TokenUsage};

#[derive(Debug, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response_text: String,
    pub created_at: u64,
    pub token_usage: Option<TokenUsage>,
}

#[derive(Debug)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn load(&self, key: &str) -> Option<CacheEntry> {
        let path = self.entry_path(key);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) => Some(entry),
            Err(e) => {
                log::warn!("discarding unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn store(
        &self,
        key: &str,
        response_text: &str,
        token_usage: Option<TokenUsage>,
    ) -> io::Result<()> {
        let entry = CacheEntry {
            key: key.to_string(),
            response_text: response_text.to_string(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            token_usage,
        };
        let path = self.entry_path(key);
        fs::create_dir_all(path.parent().expect("entry path has a parent"))?;
        // Write-temp-then-rename keeps concurrent readers from seeing a
        // partial entry. The temp name must be unique per write: two
        // threads can store the same key at once and must not share it.
        static WRITE_SEQ: AtomicU64 = AtomicU64::new(0);
        let tmp = path.with_extension(format!(
            "tmp-{}-{}",
            std::process::id(),
            WRITE_SEQ.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, serde_json::to_vec_pretty(&entry)?)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }
}

/// Stable content hash over everything that identifies a chat draw. The
/// float is hashed by its bit pattern so formatting changes can never split
/// the cache.
pub fn chat_key(request: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    for part in [
        "chat",
        &request.model,
        &request.system_prompt,
        &request.user_prompt,
    ] {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    hasher.update(request.temperature.to_bits().to_be_bytes());
    hasher.update(request.sample_index.to_be_bytes());
    hex(&hasher.finalize())
}

pub fn embed_key(model: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    for part in ["embed", model, text] {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_text_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        let text = "line one\n  indented\tline two\u{00e9}";
        cache.store("ab12cd", text, None).unwrap();
        let entry = cache.load("ab12cd").unwrap();
        assert_eq!(entry.response_text, text);
        assert_eq!(entry.key, "ab12cd");
    }

    #[test]
    fn entries_shard_by_key_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        cache.store("ffab", "x", None).unwrap();
        assert!(dir.path().join("ff").join("ffab.json").exists());
    }

    #[test]
    fn corrupt_entries_read_as_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        let shard = dir.path().join("de");
        fs::create_dir_all(&shard).unwrap();
        fs::write(shard.join("dead.json"), b"not json").unwrap();
        assert!(cache.load("dead").is_none());
    }

    #[test]
    fn chat_keys_separate_sample_indices_and_prompts() {
        let base = ChatRequest {
            model: "m".into(),
            system_prompt: "s".into(),
            user_prompt: "u".into(),
            temperature: 0.5,
            sample_index: 0,
            max_tokens: 64,
        };
        let mut other_index = base.clone();
        other_index.sample_index = 1;
        assert_ne!(chat_key(&base), chat_key(&other_index));

        let mut other_prompt = base.clone();
        other_prompt.user_prompt = "u2".into();
        assert_ne!(chat_key(&base), chat_key(&other_prompt));

        assert_eq!(chat_key(&base), chat_key(&base.clone()));
    }

    #[test]
    fn field_boundaries_cannot_collide() {
        // ("ab", "c") and ("a", "bc") must hash differently.
        let mk = |system: &str, user: &str| ChatRequest {
            model: "m".into(),
            system_prompt: system.into(),
            user_prompt: user.into(),
            temperature: 0.0,
            sample_index: 0,
            max_tokens: 1,
        };
        assert_ne!(chat_key(&mk("ab", "c")), chat_key(&mk("a", "bc")));
    }
}
