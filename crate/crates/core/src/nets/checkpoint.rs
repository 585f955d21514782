use std::path::Path;

use ndarray::Array1;

use super::{init_model, ArchConfig, Model};
use crate::container::{self, Reader, Section, Writer};
use crate::error::{Error, Result};

pub const MODEL_KIND: &str = "model";

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    kind: String,
    params: usize,
    arch: ArchConfig,
}

fn format_err(section: &str, message: impl Into<String>) -> Error {
    Error::Format { section: section.into(), message: message.into() }
}

/// Sections: `manifest` (TOML architecture), `params` (every trainable
/// tensor in model order, f64), `bnstats` (running mean/var and update count).
pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let manifest = ModelManifest { kind: MODEL_KIND.into(), params: model.num_params(), arch: model.config.clone() };
    let text = toml::to_string(&manifest).map_err(|e| format_err("manifest", e.to_string()))?;
    let mut params = Writer::new();
    let tensors = model.tensors();
    params.u32(tensors.len() as u32);
    for (_, t) in tensors {
        params.f64s(t);
    }
    let p = &model.prednet;
    let mut stats = Writer::new();
    stats.f64s(p.running_mean.as_slice().unwrap()).f64s(p.running_var.as_slice().unwrap()).u64(p.stat_updates);
    container::write_file(
        path,
        &[
            Section::new("manifest", text.into_bytes()),
            Section::new("params", params.finish()),
            Section::new("bnstats", stats.finish()),
        ],
    )
}

pub fn load_model(path: &Path) -> Result<Model> {
    let sections = container::read_file(path)?;
    let text = std::str::from_utf8(&container::find(&sections, "manifest")?.payload)
        .map_err(|_| format_err("manifest", "not UTF-8"))?;
    let manifest: ModelManifest = toml::from_str(text).map_err(|e| format_err("manifest", e.to_string()))?;
    if manifest.kind != MODEL_KIND {
        return Err(format_err("manifest", format!("file holds a `{}`, not a model", manifest.kind)));
    }
    let mut model = init_model(&manifest.arch, 0)?;

    let ps = container::find(&sections, "params")?;
    let mut r = Reader::new(ps);
    let count = r.u32()? as usize;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(r.f64s()?);
    }
    r.expect_end()?;
    {
        let mut tensors = model.tensors_mut();
        if tensors.len() != count {
            return Err(r.error(format!("{count} tensors, architecture has {}", tensors.len())));
        }
        for (i, ((_, dst), src)) in tensors.iter_mut().zip(&values).enumerate() {
            if dst.len() != src.len() {
                return Err(r.error(format!("tensor {i} holds {} values, expected {}", src.len(), dst.len())));
            }
            dst.copy_from_slice(src);
        }
    }

    let bs = container::find(&sections, "bnstats")?;
    let mut r = Reader::new(bs);
    let mean = r.f64s()?;
    let var = r.f64s()?;
    let updates = r.u64()?;
    r.expect_end()?;
    let d = model.prednet.d_in();
    if mean.len() != d || var.len() != d {
        return Err(r.error(format!("statistics of length {}/{}, expected {d}", mean.len(), var.len())));
    }
    model.prednet.running_mean = Array1::from(mean);
    model.prednet.running_var = Array1::from(var);
    model.prednet.stat_updates = updates;
    model.touch();
    Ok(model)
}
