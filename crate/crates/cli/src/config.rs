use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use streetdcm::trainer::TrainConfig;

use crate::{Failure, TrainFlags};

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

/// Overlays `top` onto `base`: objects merge key by key, arrays of equal
/// length merge element by element, anything else is replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (Value::Array(b), Value::Array(t)) if b.len() == t.len() => {
            for (slot, v) in b.iter_mut().zip(t) {
                merge(slot, v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `base`, overlaid with the JSON file at `path` when given.
pub fn layered<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else { return Ok(base) };
    let mut value = serde_json::to_value(&base).map_err(|e| Failure::Runtime(e.to_string()))?;
    merge(&mut value, read_json(path)?);
    serde_json::from_value(value).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

/// Built-in defaults, then the config file, then command-line flags.
pub fn train_config(base: TrainConfig, flags: &TrainFlags) -> Result<TrainConfig, Failure> {
    let mut c = layered(base, flags.config.as_deref())?;
    if let Some(s) = flags.seed {
        c.rng_seed = s;
    }
    for (phase, kappa) in [flags.kappa1, flags.kappa2, flags.kappa3].into_iter().enumerate() {
        if let Some(k) = kappa {
            c.phases[phase].kappa = k;
        }
    }
    if let Some(lr) = flags.lr {
        c.learning_rate = lr;
        for p in &mut c.phases {
            p.learning_rate = None;
        }
    }
    if let Some(b) = flags.batch {
        c.batch_size = b;
    }
    if let Some(l2) = flags.l2 {
        c.l2_lambda = l2;
    }
    if let Some(e) = flags.epochs {
        for p in &mut c.phases {
            p.max_epochs = e;
        }
    }
    c.validate()?;
    Ok(c)
}
