//! Versioned JSON persistence for networks.
//!
//! serde_json emits the shortest decimal that round-trips each f64 (at most
//! 17 significant digits), so save/load reproduces every parameter bit-exactly.

use serde::{Deserialize, Serialize};

use crate::network::Network;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: u32,
    network: Network,
}

pub fn to_json(net: &Network) -> Result<String> {
    let doc = Document {
        format_version: FORMAT_VERSION,
        network: net.clone(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::MalformedModel(e.to_string()))
}

pub fn from_json(text: &str) -> Result<Network> {
    // Peek at the version first so a bumped version reports as such rather
    // than as a schema mismatch.
    let probe: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::MalformedModel(e.to_string()))?;
    let found = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::MalformedModel("missing format_version".into()))?
        as u32;
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            expected: FORMAT_VERSION,
            found,
        });
    }
    let doc: Document =
        serde_json::from_str(text).map_err(|e| Error::MalformedModel(e.to_string()))?;
    doc.network.validate()?;
    Ok(doc.network)
}
