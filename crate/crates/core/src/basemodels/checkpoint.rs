//! Model checkpoints: a JSON header next to a binary blob of matrices.
//!
//! The blob is a concatenation of feature-format blocks, one per tensor, in
//! header order. Values are stored at f32 precision.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generative::FeatureGenerator;
use super::{Architecture, CompatModel, GenerativeModel, PrototypeModel, ZslModel};
use crate::datamodel::io::{decode_features, encode_features};
use crate::datamodel::{ClassId, SemanticTable};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Mlp};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: Architecture,
    pub seed: u64,
    pub shapes: Vec<(usize, usize)>,
    pub hyperparameters: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Matrix>,
}

#[derive(Serialize, Deserialize)]
struct OnDisk {
    version: u32,
    #[serde(flatten)]
    header: CheckpointHeader,
}

fn blob_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes `path` (JSON header) and a sibling `.bin` with the tensors.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let on_disk = OnDisk {
        version: CHECKPOINT_VERSION,
        header: ckpt.header.clone(),
    };
    let mut json = serde_json::to_string_pretty(&on_disk)?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let blob: Vec<u8> = ckpt.tensors.iter().flat_map(encode_features).collect();
    let bin = blob_path(path);
    fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let on_disk: OnDisk = serde_json::from_slice(&text).map_err(|e| {
        Error::format(
            path,
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    if on_disk.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            "version",
            format!("unsupported checkpoint version {}", on_disk.version),
        ));
    }
    let bin = blob_path(path);
    let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(on_disk.header.shapes.len());
    for &(r, c) in &on_disk.header.shapes {
        let len = 20 + r * c * 4;
        let block = blob.get(offset..offset + len).ok_or_else(|| {
            Error::format(
                &bin,
                format!("byte {offset}"),
                "dimension mismatch: blob is shorter than the header says",
            )
        })?;
        let m = decode_features(block, &bin)?;
        if m.shape() != (r, c) {
            return Err(Error::format(
                &bin,
                format!("byte {offset}"),
                "dimension mismatch with header shape",
            ));
        }
        tensors.push(m);
        offset += len;
    }
    if offset != blob.len() {
        return Err(Error::format(
            &bin,
            format!("byte {offset}"),
            "trailing bytes after last tensor",
        ));
    }
    Ok(Checkpoint {
        header: on_disk.header,
        tensors,
    })
}

fn hp<T: serde::de::DeserializeOwned>(h: &serde_json::Value, key: &str) -> Result<T> {
    h.get(key)
        .cloned()
        .ok_or_else(|| Error::InvalidInput(format!("checkpoint is missing hyperparameter {key:?}")))
        .and_then(|v| serde_json::from_value(v).map_err(Error::from))
}

impl Checkpoint {
    /// Rebuilds the trained model this checkpoint describes.
    pub fn into_model(self) -> Result<Box<dyn ZslModel>> {
        let h = &self.header.hyperparameters;
        let expected = match self.header.arch {
            Architecture::Prototype | Architecture::Compat => 2,
            Architecture::Generative => 5,
        };
        if self.tensors.len() != expected {
            return Err(Error::InvalidInput(format!(
                "{} checkpoint needs {expected} tensors, found {}",
                self.header.arch,
                self.tensors.len()
            )));
        }
        let seed = self.header.seed;
        let mut t = self.tensors.into_iter();
        let mut next = || t.next().expect("count checked");
        Ok(match self.header.arch {
            Architecture::Prototype => {
                let net = Mlp::from_params(
                    hp(h, "input")?,
                    hp(h, "hidden")?,
                    hp(h, "output")?,
                    next().into_vec(),
                )?;
                Box::new(PrototypeModel {
                    net,
                    semantics: SemanticTable::new(next())?,
                    tau: hp(h, "tau")?,
                    normalize_features: hp(h, "normalize_features")?,
                    seed,
                    loss_history: vec![],
                })
            }
            Architecture::Generative => {
                let classes: Vec<ClassId> = hp(h, "classes")?;
                let dim: usize = hp(h, "dim")?;
                let generator = FeatureGenerator {
                    map: next(),
                    attr_center: next().into_vec(),
                    mean_center: next().into_vec(),
                    variance: next().into_vec(),
                };
                let params = next();
                if params.shape() != (dim + 1, classes.len()) {
                    return Err(Error::Shape(
                        "generative classifier block has the wrong shape".into(),
                    ));
                }
                Box::new(GenerativeModel {
                    generator,
                    classes,
                    params: params.into_vec(),
                    dim,
                    seed,
                    loss_history: vec![],
                })
            }
            Architecture::Compat => Box::new(CompatModel {
                v: next(),
                semantics: SemanticTable::new(next())?,
                score_scale: hp(h, "score_scale")?,
                seed,
            }),
        })
    }
}
