//! Runtime configuration from the environment.

use std::path::PathBuf;

use crate::{Error, Result};

pub const ENV_PORT: &str = "PPM_PORT";
pub const ENV_WORKERS: &str = "PPM_WORKERS";
pub const ENV_STORAGE_DIR: &str = "PPM_STORAGE_DIR";
pub const ENV_CACHE_DIR: &str = "PPM_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub port: u16,
    pub workers: usize,
    pub storage_dir: PathBuf,
    pub cache_dir: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            port: 8080,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()).clamp(1, 4),
            storage_dir: PathBuf::from("ppm-data/store"),
            cache_dir: PathBuf::from("ppm-data/cache"),
        }
    }
}

impl Settings {
    /// Keeps both directories under one root.
    pub fn rooted(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Settings { storage_dir: root.join("store"), cache_dir: root.join("cache"), ..Settings::default() }
    }

    pub fn from_env() -> Result<Self> {
        Settings::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(v) = get(ENV_PORT) {
            s.port = v.trim().parse().map_err(|_| Error::invalid(format!("{ENV_PORT}: `{v}` is not a port")))?;
        }
        if let Some(v) = get(ENV_WORKERS) {
            s.workers = match v.trim().parse() {
                Ok(n) if n >= 1 => n,
                _ => return Err(Error::invalid(format!("{ENV_WORKERS}: `{v}` is not a positive count"))),
            };
        }
        if let Some(v) = get(ENV_STORAGE_DIR) {
            s.storage_dir = v.into();
        }
        if let Some(v) = get(ENV_CACHE_DIR) {
            s.cache_dir = v.into();
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn reads_overrides() {
        let env: HashMap<&str, &str> = [(ENV_PORT, "9001"), (ENV_WORKERS, "3"), (ENV_CACHE_DIR, "/tmp/c")].into();
        let s = Settings::from_lookup(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(s.port, 9001);
        assert_eq!(s.workers, 3);
        assert_eq!(s.cache_dir, PathBuf::from("/tmp/c"));
        assert_eq!(s.storage_dir, Settings::default().storage_dir);
    }

    #[test]
    fn rejects_zero_workers() {
        assert!(Settings::from_lookup(|k| (k == ENV_WORKERS).then(|| "0".to_string())).is_err());
    }
}
