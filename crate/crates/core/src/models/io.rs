use std::path::Path;

use super::{ArchKind, BundleMeta, Network, WeightBundle};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

const KIND: &str = "weights";

impl WeightBundle {
    pub fn to_container(&self) -> Result<Container> {
        let meta = serde_json::to_value(&self.meta)
            .map_err(|e| Error::format(format!("cannot encode weight metadata: {e}")))?;
        let mut c = Container::new(KIND, meta);
        for p in self.network.param_refs() {
            c.push_f64(&p.name, &p.shape, p.data);
        }
        Ok(c)
    }

    /// Rebuilds the layer graph from the stored spec and fills every slot by name.
    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(KIND)?;
        let meta: BundleMeta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::format(format!("bad weight metadata: {e}")))?;
        let mut network = Network::init(&meta.spec, 0)
            .map_err(|e| Error::format(format!("stored network spec is invalid: {e}")))?;
        let layout: Vec<(String, Vec<usize>)> = network
            .param_refs()
            .into_iter()
            .map(|p| (p.name, p.shape))
            .collect();
        if c.entries().len() != layout.len() {
            return Err(Error::format(format!(
                "{} tensors stored but a {} network has {}",
                c.entries().len(),
                meta.spec.arch.name(),
                layout.len()
            )));
        }
        let mut slots = Vec::new();
        network.collect_mut(&mut slots);
        for ((name, shape), slot) in layout.iter().zip(slots) {
            let (stored_shape, data) = c.get_f64(name)?;
            if &stored_shape != shape {
                return Err(Error::format(format!(
                    "parameter {name} has shape {stored_shape:?}, expected {shape:?}"
                )));
            }
            *slot = data;
        }
        Ok(WeightBundle { meta, network })
    }
}

pub fn save_weights(path: &Path, bundle: &WeightBundle) -> Result<()> {
    bundle.to_container()?.write(path)
}

pub fn load_weights(path: &Path) -> Result<WeightBundle> {
    WeightBundle::from_container(&Container::read(path)?)
}

/// Like [`load_weights`], rejecting bundles built for another architecture.
pub fn load_weights_expecting(path: &Path, arch: ArchKind) -> Result<WeightBundle> {
    let bundle = load_weights(path)?;
    if bundle.arch() != arch {
        return Err(Error::format(format!(
            "weights are for the {} architecture, expected {}",
            bundle.arch().name(),
            arch.name()
        )));
    }
    Ok(bundle)
}
