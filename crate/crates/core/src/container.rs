//! Binary model files.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, then the
//! bincode-encoded [`ModelContainer`]. Loading checks magic, version and the
//! attribute-universe fingerprint before anything else is trusted.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{AttributeUniverse, OutcomeSchema};
use crate::error::{Error, Result};
use crate::forest::ForestModel;
use crate::gbm::GbmModel;
use crate::model::{Family, Model};
use crate::stack::StackBundle;
use crate::svm::SvmModel;

pub const MAGIC: &[u8; 8] = b"PRCSRMDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Forest(ForestModel),
    Gbm(GbmModel),
    Svm(SvmModel),
    Stack(Box<StackBundle>),
}

impl Payload {
    pub fn family(&self) -> Family {
        match self {
            Payload::Forest(_) => Family::Forest,
            Payload::Gbm(_) => Family::Gbm,
            Payload::Svm(_) => Family::Svm,
            Payload::Stack(_) => Family::Stack,
        }
    }

    pub fn from_model(model: Model) -> Self {
        match model {
            Model::Forest(m) => Payload::Forest(m),
            Model::Gbm(m) => Payload::Gbm(m),
            Model::Svm(m) => Payload::Svm(m),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(match self {
            Payload::Forest(m) => m.predict(x),
            Payload::Gbm(m) => m.predict(x),
            Payload::Svm(m) => m.predict(x),
            Payload::Stack(b) => b.predict(x)?.class,
        })
    }

    pub fn n_features(&self) -> usize {
        match self {
            Payload::Forest(m) => m.n_features,
            Payload::Gbm(m) => m.n_features,
            Payload::Svm(m) => m.n_features,
            Payload::Stack(b) => b.forest.n_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelContainer {
    pub family: Family,
    pub universe_fingerprint: String,
    pub schema: OutcomeSchema,
    /// Hyperparameters as JSON, for display.
    pub params_json: String,
    pub train_class_counts: Vec<u64>,
    pub seed: u64,
    pub payload: Payload,
}

impl ModelContainer {
    pub fn new(
        universe: &AttributeUniverse,
        schema: OutcomeSchema,
        params_json: String,
        train_class_counts: Vec<u64>,
        seed: u64,
        payload: Payload,
    ) -> Self {
        Self {
            family: payload.family(),
            universe_fingerprint: universe.fingerprint(),
            schema,
            params_json,
            train_class_counts,
            seed,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bincode::serialize_into(&mut out, self).map_err(|e| Error::Container(e.to_string()))?;
        Ok(out)
    }

    /// Decodes and verifies against the runtime universe and, when given,
    /// the expected family.
    pub fn from_bytes(bytes: &[u8], universe: &AttributeUniverse, expect: Option<Family>) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Container("file too short for a model header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Container("not a model file (bad magic)".into()));
        }
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver)
            .map_err(|_| Error::Container("truncated header".into()))?;
        let version = u32::from_le_bytes(ver);
        if version != FORMAT_VERSION {
            return Err(Error::Container(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let c: ModelContainer = bincode::deserialize(r).map_err(|e| Error::Container(e.to_string()))?;
        let runtime = universe.fingerprint();
        if c.universe_fingerprint != runtime {
            return Err(Error::FingerprintMismatch {
                model: c.universe_fingerprint,
                runtime,
            });
        }
        if c.family != c.payload.family() {
            return Err(Error::Container("family tag does not match payload".into()));
        }
        if let Payload::Stack(b) = &c.payload {
            b.verify()?;
        }
        if let Some(f) = expect {
            if f != c.family {
                return Err(Error::SchemaMismatch(format!(
                    "expected a {f} model, file holds a {} model",
                    c.family
                )));
            }
        }
        if c.payload.n_features() != universe.len() {
            return Err(Error::SchemaMismatch(format!(
                "model has {} features, universe has {}",
                c.payload.n_features(),
                universe.len()
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, universe: &AttributeUniverse, expect: Option<Family>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, universe, expect)
    }

    /// Lossless text view of the container.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("container serializes")
    }
}

/// Hex SHA-256 of the bincode encoding of `value`.
pub fn digest<T: Serialize>(value: &T) -> Result<String> {
    let bytes = bincode::serialize(value).map_err(|e| Error::Container(e.to_string()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
