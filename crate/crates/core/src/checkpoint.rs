//! On-disk model format: `model.json` (shapes, layout, input scaling),
//! `weights.bin` (little-endian f64 in parameter order) and a readable
//! `prior.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, InputTransform, PdgmmVae};
use crate::prior::PriorSnapshot;

pub const MANIFEST_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const PRIOR_FILE: &str = "prior.json";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub observed: usize,
    pub sources: usize,
    pub components: usize,
    pub architecture: Architecture,
    pub input: InputTransform,
    pub params: Vec<ParamEntry>,
}

impl Manifest {
    pub fn of(model: &PdgmmVae) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            observed: model.observed(),
            sources: model.sources(),
            components: model.prior.components(),
            architecture: model.architecture(),
            input: model.input.clone(),
            params: model
                .params()
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                })
                .collect(),
        }
    }
}

pub fn write(dir: &Path, model: &PdgmmVae) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = serde_json::to_string_pretty(&Manifest::of(model))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))?;

    let bytes: Vec<u8> = model
        .flat_params()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let path = dir.join(WEIGHTS_FILE);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;

    let prior = serde_json::to_string_pretty(&model.prior.snapshot())?;
    let path = dir.join(PRIOR_FILE);
    fs::write(&path, prior).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read(dir: &Path) -> Result<PdgmmVae> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::invalid(
            "model.json format_version",
            format!("unsupported version {}", manifest.format_version),
        ));
    }
    let mut model = PdgmmVae::init(
        manifest.observed,
        manifest.sources,
        manifest.components,
        &manifest.architecture,
        0,
    );
    let expected = Manifest::of(&model).params;
    if expected != manifest.params {
        return Err(Error::invalid(
            "model.json params",
            "layout does not match the architecture",
        ));
    }
    if manifest.input.mean.len() != manifest.observed
        || manifest.input.matrix.shape() != (manifest.observed, manifest.observed)
    {
        return Err(Error::invalid(
            "model.json input",
            "scaling length differs from observed dimension",
        ));
    }
    model.input = manifest.input;

    let path = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != 8 * model.param_count() {
        return Err(Error::invalid(
            "weights.bin",
            format!(
                "expected {} bytes, found {}",
                8 * model.param_count(),
                bytes.len()
            ),
        ));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    model.set_flat_params(&flat);
    Ok(model)
}

/// Prior parameters as written next to the weights.
pub fn read_prior(dir: &Path) -> Result<PriorSnapshot> {
    let path = dir.join(PRIOR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::Architecture;

    #[test]
    fn round_trip_is_exact() {
        let mut model = PdgmmVae::init(3, 2, 3, &Architecture::nonlinear(), 9);
        let flat: Vec<f64> = (0..model.param_count())
            .map(|i| (i as f64 * 0.37).sin() / 3.0)
            .collect();
        model.set_flat_params(&flat);
        model.input = InputTransform {
            mean: vec![0.1, -0.2, 1.0 / 3.0],
            matrix: Matrix::from_fn(3, 3, |r, c| 1.0 / (1.0 + r as f64 + 2.0 * c as f64)),
        };
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &model).unwrap();
        let back = read(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(read_prior(dir.path()).unwrap(), model.prior.snapshot());
    }

    #[test]
    fn truncated_weights_rejected() {
        let model = PdgmmVae::init(2, 2, 2, &Architecture::linear(), 1);
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &model).unwrap();
        fs::write(dir.path().join(WEIGHTS_FILE), [0u8; 12]).unwrap();
        assert!(read(dir.path()).is_err());
    }
}
