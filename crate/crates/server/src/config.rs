use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use grasshap_core::array::{AcousticConfig, ArrayConfig};
use grasshap_core::session::SessionConfig;
use serde::{Deserialize, Serialize};

/// Service configuration as read from the JSON config file.
///
/// Session fields (gate window, `stm`, `gp`, `domain`, `render`, `seed`) sit at
/// the top level next to the service-only keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    /// JSON file holding an `ArrayConfig`; relative paths resolve against the
    /// config file's directory. Absent means the built-in four-unit layout.
    pub array_config_path: Option<PathBuf>,
    pub acoustic: AcousticConfig,
    /// Run the block-rate streaming loop alongside the service.
    pub stream: bool,
    #[serde(flatten)]
    pub session: SessionConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            array_config_path: None,
            acoustic: AcousticConfig::default(),
            stream: true,
            session: SessionConfig::default(),
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if let (Some(p), Some(dir)) = (&cfg.array_config_path, path.parent()) {
            if p.is_relative() {
                cfg.array_config_path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn array_config(&self) -> anyhow::Result<ArrayConfig> {
        let cfg = match &self.array_config_path {
            None => ArrayConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading array config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing array config {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let cfg: ServerConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ServerConfig::default());
    }

    #[test]
    fn session_keys_are_top_level() {
        let cfg: ServerConfig = serde_json::from_str(
            r#"{"listen":"0.0.0.0:9000","gate_min_mm":120,"gate_max_mm":260,"stm":{"circle_radius_mm":6}}"#,
        )
        .unwrap();
        assert_eq!(cfg.listen.port(), 9000);
        assert_eq!(cfg.session.gate_min_mm, 120.0);
        assert_eq!(cfg.session.gate_max_mm, 260.0);
        assert_eq!(cfg.session.stm.circle_radius_mm, 6.0);
        assert_eq!(cfg.session.stm.stm_freq_hz, 10.0);
    }

    #[test]
    fn array_path_resolves_next_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("array.json"),
            serde_json::to_string(&ArrayConfig::tilted_quad(10.0, 5.0)).unwrap(),
        )
        .unwrap();
        let path = dir.path().join("server.json");
        std::fs::write(&path, r#"{"array_config_path":"array.json"}"#).unwrap();
        let cfg = ServerConfig::load(&path).unwrap();
        assert_eq!(cfg.array_config().unwrap(), ArrayConfig::tilted_quad(10.0, 5.0));
    }
}
