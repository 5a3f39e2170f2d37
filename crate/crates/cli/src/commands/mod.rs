pub mod analyze;
pub mod calibrate;
pub mod replay;
pub mod simulate;
pub mod stream;
pub mod trace;

use std::collections::BTreeMap;

use anyhow::{bail, Result};

/// Parses repeated `key=value` flags.
pub fn parse_tags(items: &[String]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for item in items {
        let Some((k, v)) = item.split_once('=') else {
            bail!("expected key=value, got {item:?}");
        };
        if k.is_empty() {
            bail!("empty tag name in {item:?}");
        }
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}
