use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::models::{CoarseSpec, Model, ModelConfig};
use crate::numerics::Tensor;
use crate::params::ParamSet;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub vocab: Vocabulary,
    pub coarse: Option<CoarseSpec>,
    pub train: Option<TrainConfig>,
}

/// A trained model with everything needed to use it on raw text.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    pub coarse: Option<CoarseSpec>,
    pub train: Option<TrainConfig>,
}

/// Parameters rounded to the single precision checkpoints store.
pub fn stored_precision(params: &ParamSet) -> ParamSet {
    let mut out = params.clone();
    for t in out.values_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
    out
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            model: self.model.config().clone(),
            tensors: self
                .model
                .params
                .iter()
                .map(|(name, t)| TensorEntry { name: name.to_string(), shape: t.shape().to_vec() })
                .collect(),
            vocab: self.vocab.clone(),
            coarse: self.coarse.clone(),
            train: self.train.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
        let mut w = BufWriter::new(fs::File::create(dir.join(PAYLOAD_FILE))?);
        for (_, t) in self.model.params.iter() {
            for &x in t.data() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", manifest.format_version)));
        }
        let bytes = fs::read(dir.join(PAYLOAD_FILE))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(PAYLOAD_FILE).display())))?;
        let expected: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum::<usize>() * 4;
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!("payload has {} bytes, manifest implies {expected}", bytes.len())));
        }
        let mut floats = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut params = ParamSet::new();
        for entry in &manifest.tensors {
            let n = entry.shape.iter().product();
            let data: Vec<f64> = floats.by_ref().take(n).collect();
            params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
        }
        if manifest.vocab.len() != manifest.model.vocab_size {
            return Err(Error::Checkpoint("vocabulary size disagrees with model config".into()));
        }
        let model = Model::from_params(manifest.model, params)?;
        Ok(Self { model, vocab: manifest.vocab, coarse: manifest.coarse, train: manifest.train })
    }
}
