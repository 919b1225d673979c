use std::path::Path;

use serde_json::Value;

use super::{init_models, ModelBundle, NetConfig};
use crate::container::{ArrayData, Container};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A loaded checkpoint: the model plus whatever state the writer attached.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    /// Free-form metadata (config echo, iteration counter, RNG state).
    pub meta: Value,
    /// Named auxiliary arrays such as optimizer moments.
    pub extra: Vec<(String, Tensor)>,
}

const PARAM_PREFIX: &str = "param/";
const EXTRA_PREFIX: &str = "extra/";

/// Write `bundle`, `meta` and `extra` atomically into one container; returns its checksum.
pub fn save_checkpoint(path: &Path, bundle: &ModelBundle, meta: &Value, extra: &[(String, Tensor)]) -> Result<String> {
    let mut c = Container::default();
    let header = serde_json::json!({ "net_config": bundle.config, "meta": meta });
    let bytes = serde_json::to_vec(&header)?;
    c.push("header", vec![bytes.len()], ArrayData::U8(bytes));
    for e in bundle.store.entries() {
        c.push(format!("{PARAM_PREFIX}{}", e.name), e.value.shape().to_vec(), ArrayData::F64(e.value.data().to_vec()));
    }
    for (name, t) in extra {
        c.push(format!("{EXTRA_PREFIX}{name}"), t.shape().to_vec(), ArrayData::F64(t.data().to_vec()));
    }
    c.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Checkpoint(format!("{} does not exist", path.display())));
    }
    let c = Container::read(path, None).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let bad = |what: String| Error::Checkpoint(format!("{}: {what}", path.display()));
    let header = match c.get("header").map(|a| &a.data) {
        Some(ArrayData::U8(b)) => b,
        _ => return Err(bad("missing header".into())),
    };
    let mut header: Value = serde_json::from_slice(header).map_err(|e| bad(e.to_string()))?;
    let config: NetConfig =
        serde_json::from_value(header["net_config"].take()).map_err(|e| bad(format!("net_config: {e}")))?;
    let mut bundle = init_models(&config, 0)?;
    let ids: Vec<_> = bundle.store.ids().collect();
    for id in ids {
        let name = bundle.store.entry(id).name.clone();
        let arr = c
            .get(&format!("{PARAM_PREFIX}{name}"))
            .ok_or_else(|| bad(format!("missing parameter {name}")))?;
        let ArrayData::F64(data) = &arr.data else {
            return Err(bad(format!("parameter {name} is not f64")));
        };
        if arr.shape != bundle.store.value(id).shape() {
            return Err(bad(format!("parameter {name} has shape {:?}", arr.shape)));
        }
        bundle.store.set(id, Tensor::new(arr.shape.clone(), data.clone()));
    }
    let mut extra = Vec::new();
    for a in &c.arrays {
        if let Some(name) = a.name.strip_prefix(EXTRA_PREFIX) {
            let ArrayData::F64(data) = &a.data else {
                return Err(bad(format!("array {name} is not f64")));
            };
            extra.push((name.to_string(), Tensor::new(a.shape.clone(), data.clone())));
        }
    }
    Ok(Checkpoint {
        bundle,
        meta: header["meta"].take(),
        extra,
    })
}
