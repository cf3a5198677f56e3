//! Configuration-file ingestion.
//!
//! Hardware specs (and the other file-based inputs) are TOML key-value
//! trees. Every field is optional and falls back to the built-in default;
//! unknown keys are rejected with a diagnostic that names the key.

use crate::hw::HardwareSpec;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Invalid { path: String, message: String },
}

/// Parses a hardware spec from TOML text. Unknown keys are errors.
pub fn hardware_spec_from_str(text: &str, origin: &str) -> Result<HardwareSpec, ConfigError> {
    let spec: HardwareSpec = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    spec.validate().map_err(|e| ConfigError::Invalid {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    Ok(spec)
}

/// Loads a hardware spec from a TOML file.
pub fn load_hardware_spec(path: &Path) -> Result<HardwareSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    hardware_spec_from_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_yields_defaults() {
        let spec = hardware_spec_from_str("", "<test>").unwrap();
        assert_eq!(spec, HardwareSpec::default());
    }

    #[test]
    fn partial_override() {
        let spec = hardware_spec_from_str("ddr_bandwidth = 60e9\nclusters_total = 8\n", "<test>")
            .unwrap();
        assert_eq!(spec.ddr_bandwidth, 60e9);
        assert_eq!(spec.clusters_total, 8);
        assert_eq!(spec.am_bytes, HardwareSpec::default().am_bytes);
    }

    #[test]
    fn unknown_key_is_rejected_and_named() {
        let err = hardware_spec_from_str("dram_bytes = 1\n", "<test>").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dram_bytes"), "diagnostic must name the key: {msg}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let err = hardware_spec_from_str("broadcast_latency_factor = 3.0\n", "<test>").unwrap_err();
        assert!(err.to_string().contains("broadcast_latency_factor"));
    }
}
