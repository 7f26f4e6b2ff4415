//! Room configuration documents.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ROOMS_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing rooms file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported rooms file version {0}")]
    Version(u32),
    #[error("rooms file lists no rooms")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub id: String,
    pub width_m: f64,
    pub depth_m: f64,
    pub display_x0_m: f64,
    pub display_x1_m: f64,
}

/// `{"version": 1, "rooms": [{id, width_m, depth_m, display_x0_m, display_x1_m}]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomsFile {
    #[serde(default = "default_version")]
    pub version: u32,
    pub rooms: Vec<RoomSpec>,
}

fn default_version() -> u32 {
    ROOMS_FILE_VERSION
}

impl RoomsFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let file: RoomsFile = serde_json::from_str(text)?;
        if file.version != ROOMS_FILE_VERSION {
            return Err(ConfigError::Version(file.version));
        }
        if file.rooms.is_empty() {
            return Err(ConfigError::Empty);
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Hex SHA-256 of the canonical JSON encoding. Trace headers carry it.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("rooms file serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{"version":1,"rooms":[
        {"id":"main","width_m":6.0,"depth_m":5.0,"display_x0_m":2.0,"display_x1_m":4.0},
        {"id":"remote","width_m":4.0,"depth_m":4.0,"display_x0_m":1.0,"display_x1_m":3.0}]}"#;

    #[test]
    fn parses_and_hashes_stably() {
        let f = RoomsFile::parse(SAMPLE).unwrap();
        assert_eq!(f.rooms.len(), 2);
        assert_eq!(f.content_hash(), RoomsFile::parse(SAMPLE).unwrap().content_hash());
        let mut g = f.clone();
        g.rooms[1].depth_m = 3.9;
        assert_ne!(f.content_hash(), g.content_hash());
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(RoomsFile::parse("{"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            RoomsFile::parse(r#"{"version":2,"rooms":[]}"#),
            Err(ConfigError::Version(2))
        ));
        assert!(matches!(RoomsFile::parse(r#"{"rooms":[]}"#), Err(ConfigError::Empty)));
    }
}
