//! Self-describing JSON run reports.

use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl InputDigest {
    pub fn of_file(path: &Path) -> io::Result<Self> {
        let mut file = File::open(path)?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = file.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex(&hasher.finalize()),
            bytes,
        })
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One CLI invocation. `argv` and `config` are enough to run it again:
/// `argv` verbatim, and `config` as the resolved options (for `simulate`
/// the full scene, which `--config` accepts back).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    #[serde(default)]
    pub outputs: Vec<String>,
    pub seeds: Vec<u64>,
    pub results: serde_json::Value,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: Vec::new(),
            results: serde_json::Value::Null,
            wall_time_s: 0.0,
        }
    }

    /// Parses `text` as a report; `None` when it is some other JSON.
    pub fn parse(text: &str) -> Option<Self> {
        let v: serde_json::Value = serde_json::from_str(text).ok()?;
        v.get("schema_version")?;
        serde_json::from_value(v).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn digest_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"abc").unwrap();
        let d = InputDigest::of_file(f.path()).unwrap();
        assert_eq!(d.sha256, sha256_hex(b"abc"));
        assert_eq!(d.bytes, 3);
    }

    #[test]
    fn report_round_trips_and_is_recognized() {
        let mut r = RunReport::new("tomo", vec!["tomo".into()]);
        r.results = serde_json::json!({"dop": 0.3});
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(RunReport::parse(&text).unwrap(), r);
        assert!(RunReport::parse(r#"{"center_nm": 1292.0}"#).is_none());
    }
}
