use std::path::Path;

use super::{read_file, write_atomic, FormatError};
use crate::pipeline::PipelineConfig;

pub fn parse_config(text: &str) -> Result<PipelineConfig, FormatError> {
    let cfg: PipelineConfig = toml::from_str(text).map_err(|e| FormatError::Config(e.to_string()))?;
    cfg.validate().map_err(|e| FormatError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn config_to_text(cfg: &PipelineConfig) -> Result<String, FormatError> {
    toml::to_string(cfg).map_err(|e| FormatError::Config(e.to_string()))
}

/// Reads a TOML pipeline config. Missing keys take their defaults.
pub fn read_config(path: &Path) -> Result<PipelineConfig, FormatError> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| FormatError::Encoding)?;
    parse_config(&text)
}

pub fn write_config(path: &Path, cfg: &PipelineConfig) -> Result<(), FormatError> {
    write_atomic(path, config_to_text(cfg)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Cadence;

    #[test]
    fn round_trip_and_defaults() {
        let cfg = PipelineConfig {
            cadence: Cadence::EveryK(5),
            capacity_limit: Some(8),
            seed: 42,
            ..Default::default()
        };
        let text = config_to_text(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
        assert_eq!(config_to_text(&parse_config(&text).unwrap()).unwrap(), text);
        assert_eq!(parse_config("").unwrap(), PipelineConfig::default());
        let partial = parse_config("enable_smem = false\n[synthetic]\nbase_noise = 0.0\n").unwrap();
        assert!(!partial.enable_smem);
        assert_eq!(partial.synthetic.base_noise, 0.0);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(parse_config("lamda = 1.0\n").is_err());
        assert!(parse_config("cadence = \"every:0\"\n").is_err());
        assert!(parse_config("tau_mem = 2.0\n").is_err());
        assert!(parse_config("object_wise_memory = true\n").is_err());
    }
}
