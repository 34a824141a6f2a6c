//! Built-in demo configurations.

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const DEMO_NAMES: [&str; 3] = ["constant", "1d-two-phase", "schrodinger-1d"];

fn source(name: &str) -> Option<&'static str> {
    match name {
        "constant" => Some(include_str!("../demos/constant.json")),
        "1d-two-phase" => Some(include_str!("../demos/1d-two-phase.json")),
        "schrodinger-1d" => Some(include_str!("../demos/schrodinger-1d.json")),
        _ => None,
    }
}

/// JSON text of a demo, as shipped.
pub fn demo_json(name: &str) -> Result<&'static str> {
    source(name).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown demo '{name}' (have {})",
            DEMO_NAMES.join(", ")
        ))
    })
}

pub fn demo_config(name: &str) -> Result<RunConfig> {
    RunConfig::from_json(demo_json(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demos_parse() {
        for name in DEMO_NAMES {
            let cfg = demo_config(name).unwrap();
            assert_eq!(cfg.name, name);
        }
        assert!(demo_config("nope").is_err());
    }
}
