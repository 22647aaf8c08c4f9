//! Q-network checkpointing on top of the tensor store.

use std::collections::BTreeMap;
use std::path::Path;

use crate::store::{self, StoreError};
use crate::tensor::Tensor;

use super::{NetConfig, QNetworkParams};

const KIND: &str = "qnet";

/// Writes the parameter set and its architecture config to `path`.
pub fn save_qnet(path: &Path, params: &QNetworkParams) -> Result<(), StoreError> {
    let meta = serde_json::json!({
        "kind": KIND,
        "config": params.config,
    });
    store::write(path, &meta, &params.named())
}

/// Restores a parameter set saved by [`save_qnet`]. Every tensor the config
/// implies must be present with its exact shape, and no extras are allowed.
pub fn load_qnet(path: &Path) -> Result<QNetworkParams, StoreError> {
    let (meta, records) = store::read(path)?;
    let kind = meta.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    if kind != KIND {
        return Err(StoreError::Format(format!(
            "expected a {KIND} checkpoint, found kind {kind:?}"
        )));
    }
    let config: NetConfig = serde_json::from_value(
        meta.get("config")
            .cloned()
            .ok_or_else(|| StoreError::Format("metadata has no config".into()))?,
    )?;
    let mut by_name: BTreeMap<String, Tensor> = records.into_iter().collect();
    let mut params = QNetworkParams::zeros(&config)
        .map_err(|e| StoreError::Format(format!("config does not describe a network: {e}")))?;
    let mut fill_err = None;
    params.visit_mut(&mut |name, slot| {
        if fill_err.is_some() {
            return;
        }
        match by_name.remove(name) {
            Some(t) if t.shape() == slot.shape() => *slot = t,
            Some(t) => {
                fill_err = Some(StoreError::BadRecord(format!(
                    "{name}: shape {:?} in file, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            None => fill_err = Some(StoreError::BadRecord(format!("{name}: missing from file"))),
        }
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    if let Some(extra) = by_name.into_keys().next() {
        return Err(StoreError::BadRecord(format!(
            "{extra}: not part of this architecture"
        )));
    }
    Ok(params)
}
