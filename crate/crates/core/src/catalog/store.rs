use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CatalogError, ModelImage};
use crate::canonical;
use crate::descriptors::{parse_descriptor, Descriptor};
use crate::Millis;

/// One line of `catalog/index.log`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub op: String,
    pub id: String,
    pub name: String,
    pub version: String,
    pub digest: String,
    pub t: Millis,
}

#[derive(Debug)]
pub(super) struct DiskStore {
    root: PathBuf,
}

impl DiskStore {
    pub fn open(data_dir: &Path) -> Result<Self, CatalogError> {
        let root = data_dir.join("catalog");
        fs::create_dir_all(root.join("descriptors"))?;
        fs::create_dir_all(root.join("models"))?;
        Ok(DiskStore { root })
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("index.log")
    }

    pub fn read_index(&self) -> Result<Vec<IndexRecord>, CatalogError> {
        let path = self.index_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let reader = BufReader::new(fs::File::open(path)?);
        let mut out = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| CatalogError::Corrupt(e.to_string()))?);
        }
        Ok(out)
    }

    pub fn append(&self, record: &IndexRecord) -> Result<(), CatalogError> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.index_path())?;
        let mut line = canonical::to_canonical(record);
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn write_blob(&self, digest: &str, blob: &[u8]) -> Result<(), CatalogError> {
        let path = self.root.join("models").join(format!("{digest}.bin"));
        if !path.exists() {
            fs::write(path, blob)?;
        }
        Ok(())
    }

    pub fn read_blob(&self, digest: &str) -> Result<Vec<u8>, CatalogError> {
        let bytes = fs::read(self.root.join("models").join(format!("{digest}.bin")))?;
        if canonical::sha256_hex(&bytes) != digest {
            return Err(CatalogError::Corrupt(format!("blob {digest} does not match its digest")));
        }
        Ok(bytes)
    }

    pub fn write_model(&self, image: &ModelImage) -> Result<(), CatalogError> {
        let path = self.root.join("models").join(format!("{}.json", image.model_id));
        fs::write(path, canonical::to_canonical_pretty(image))?;
        Ok(())
    }

    pub fn read_model(&self, model_id: &str) -> Result<ModelImage, CatalogError> {
        let text = fs::read_to_string(self.root.join("models").join(format!("{model_id}.json")))?;
        serde_json::from_str(&text).map_err(|e| CatalogError::Corrupt(e.to_string()))
    }

    pub fn write_descriptor(&self, digest: &str, desc: &Descriptor) -> Result<(), CatalogError> {
        let path = self.root.join("descriptors").join(format!("{digest}.json"));
        fs::write(path, desc.to_canonical_json())?;
        Ok(())
    }

    pub fn read_descriptor(&self, digest: &str) -> Result<Descriptor, CatalogError> {
        let text = fs::read_to_string(self.root.join("descriptors").join(format!("{digest}.json")))?;
        parse_descriptor(&text).map_err(|e| CatalogError::Corrupt(e.to_string()))
    }
}
