//! NIS/NIF catalogs and the model registry.
//!
//! Descriptors and model images are content-addressed. When opened on a data
//! directory the catalog mirrors every mutation to disk:
//!
//! ```text
//! catalog/descriptors/<digest>.json   canonical descriptor documents
//! catalog/models/<digest>.bin         model artifacts
//! catalog/models/<model_id>.json      model image metadata
//! catalog/index.log                   {op, id, name, version, digest, t} per line
//! ```
//!
//! The in-memory index is rebuilt from `index.log` on open.

mod store;

use std::collections::BTreeMap;
use std::path::Path;

use semver::Version;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::descriptors::{
    validate_descriptor, Dependency, Descriptor, LearningMetric, NifDescriptor, NisDescriptor, Platform,
    ValidationReport, VersionConstraint,
};
use crate::Millis;

pub use store::IndexRecord;
use store::DiskStore;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{name} {version} is already registered with different content")]
    VersionConflict { name: String, version: Version },
    #[error("descriptor failed validation: {0:?}")]
    InvalidDescriptor(ValidationReport),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("test score must be finite")]
    NonFiniteScore,
    #[error("catalog storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog storage is corrupt: {0}")]
    Corrupt(String),
}

/// Dimensions of the ML test score used for model arbitration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDimension {
    LearningScore,
    Qoe,
    Qos,
    Stability,
    Energy,
}

impl ScoreDimension {
    pub const ALL: [ScoreDimension; 5] = [
        ScoreDimension::LearningScore,
        ScoreDimension::Qoe,
        ScoreDimension::Qos,
        ScoreDimension::Stability,
        ScoreDimension::Energy,
    ];

    /// Costs are negated before weighting.
    pub fn is_cost(self) -> bool {
        matches!(self, ScoreDimension::Energy)
    }
}

/// Raw per-dimension scores; the learning score is already oriented so that
/// larger is better, energy is a cost.
pub type ScoreVector = BTreeMap<ScoreDimension, f64>;

/// Everything about a model image except its derived identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDraft {
    pub nif_name: String,
    pub version: Version,
    pub metric: LearningMetric,
    pub test_score: f64,
    pub platform: Platform,
    pub input_format: String,
    pub dependencies: Vec<Dependency>,
    /// Non-learning test-score dimensions (QoE, QoS, stability, energy).
    #[serde(default)]
    pub aux_scores: BTreeMap<ScoreDimension, f64>,
    pub created_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelImage {
    pub model_id: String,
    pub nif_name: String,
    pub version: Version,
    pub metric: LearningMetric,
    pub test_score: f64,
    pub platform: Platform,
    pub input_format: String,
    pub dependencies: Vec<Dependency>,
    pub aux_scores: BTreeMap<ScoreDimension, f64>,
    pub created_at: Millis,
    /// Digest of the artifact blob.
    pub blob_ref: String,
}

impl ModelImage {
    pub fn score_vector(&self) -> ScoreVector {
        let mut v = self.aux_scores.clone();
        v.insert(ScoreDimension::LearningScore, self.metric.oriented(self.test_score));
        v
    }
}

/// Deployment requirements a candidate model must satisfy. `None` fields
/// accept anything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Requirements {
    pub input_format: Option<String>,
    pub platform: Option<Platform>,
    #[serde(default)]
    pub dependency_constraints: Vec<Dependency>,
    pub min_performance: Option<f64>,
}

impl Requirements {
    pub fn any() -> Self {
        Requirements::default()
    }

    /// Requirements implied by a NIFD: its data format, platform,
    /// dependencies and lower performance threshold.
    pub fn from_nifd(desc: &NifDescriptor) -> Self {
        Requirements {
            input_format: desc.data_spec.as_ref().map(|d| d.input_format.clone()),
            platform: Some(desc.platform),
            dependency_constraints: desc.dependencies.clone(),
            min_performance: desc.thresholds.map(|t| t.lower),
        }
    }

    pub fn accepts(&self, image: &ModelImage) -> bool {
        if self.input_format.as_ref().is_some_and(|f| *f != image.input_format) {
            return false;
        }
        if self.platform.is_some_and(|p| p != image.platform) {
            return false;
        }
        if let Some(min) = self.min_performance {
            if !image.metric.meets(image.test_score, min) {
                return false;
            }
        }
        self.dependency_constraints.iter().all(|want| {
            image.dependencies.iter().any(|have| {
                have.name == want.name && have.version.base().is_some_and(|v| want.version.matches(v))
            })
        })
    }
}

/// Total order used for candidate lists: best oriented score first, then
/// newer version, then model id.
pub fn candidate_order(a: &ModelImage, b: &ModelImage) -> std::cmp::Ordering {
    let sa = a.metric.oriented(a.test_score);
    let sb = b.metric.oriented(b.test_score);
    sb.total_cmp(&sa).then_with(|| b.version.cmp(&a.version)).then_with(|| a.model_id.cmp(&b.model_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub id: String,
    pub descriptor: Descriptor,
    pub onboarded_at: Millis,
}

#[derive(Debug, Default)]
pub struct Catalog {
    models: BTreeMap<String, ModelImage>,
    versions: BTreeMap<(String, Version), String>,
    blobs: BTreeMap<String, Vec<u8>>,
    entries: BTreeMap<String, CatalogEntry>,
    entry_versions: BTreeMap<(String, String, Version), String>,
    store: Option<DiskStore>,
}

#[derive(Serialize)]
struct Identity<'a> {
    draft: &'a ModelDraft,
    blob: &'a str,
}

impl Catalog {
    pub fn in_memory() -> Self {
        Catalog::default()
    }

    /// Opens (or creates) a catalog rooted at `<data_dir>/catalog`, replaying
    /// its index log.
    pub fn open(data_dir: &Path) -> Result<Self, CatalogError> {
        let store = DiskStore::open(data_dir)?;
        let mut catalog = Catalog::default();
        for record in store.read_index()? {
            match record.op.as_str() {
                "register_model" => {
                    let image = store.read_model(&record.id)?;
                    let blob = store.read_blob(&image.blob_ref)?;
                    catalog.insert_model(image, blob);
                }
                "onboard" => {
                    let descriptor = store.read_descriptor(&record.digest)?;
                    catalog.insert_entry(CatalogEntry { id: record.id, descriptor, onboarded_at: record.t });
                }
                other => return Err(CatalogError::Corrupt(format!("unknown index op {other:?}"))),
            }
        }
        catalog.store = Some(store);
        Ok(catalog)
    }

    /// Registers a model image with its artifact blob. Re-registering
    /// identical content returns the existing id.
    pub fn register_model(&mut self, draft: ModelDraft, blob: &[u8]) -> Result<String, CatalogError> {
        if !draft.test_score.is_finite() {
            return Err(CatalogError::NonFiniteScore);
        }
        let blob_ref = canonical::sha256_hex(blob);
        // creation time is not part of an image's identity
        let identity_draft = ModelDraft { created_at: 0, ..draft.clone() };
        let digest = canonical::digest_of(&Identity { draft: &identity_draft, blob: &blob_ref });
        let model_id = format!("mdl-{}", &digest[..16]);

        let key = (draft.nif_name.clone(), draft.version.clone());
        if let Some(existing) = self.versions.get(&key) {
            return if *existing == model_id {
                Ok(model_id)
            } else {
                Err(CatalogError::VersionConflict { name: draft.nif_name, version: draft.version })
            };
        }

        let image = ModelImage {
            model_id: model_id.clone(),
            nif_name: draft.nif_name,
            version: draft.version,
            metric: draft.metric,
            test_score: draft.test_score,
            platform: draft.platform,
            input_format: draft.input_format,
            dependencies: draft.dependencies,
            aux_scores: draft.aux_scores,
            created_at: draft.created_at,
            blob_ref: blob_ref.clone(),
        };
        if let Some(store) = &self.store {
            store.write_blob(&blob_ref, blob)?;
            store.write_model(&image)?;
            store.append(&IndexRecord {
                op: "register_model".into(),
                id: model_id.clone(),
                name: image.nif_name.clone(),
                version: image.version.to_string(),
                digest: blob_ref,
                t: image.created_at,
            })?;
        }
        self.insert_model(image, blob.to_vec());
        Ok(model_id)
    }

    fn insert_model(&mut self, image: ModelImage, blob: Vec<u8>) {
        self.versions.insert((image.nif_name.clone(), image.version.clone()), image.model_id.clone());
        self.blobs.insert(image.blob_ref.clone(), blob);
        self.models.insert(image.model_id.clone(), image);
    }

    pub fn model(&self, model_id: &str) -> Option<&ModelImage> {
        self.models.get(model_id)
    }

    pub fn model_by_version(&self, nif_name: &str, version: &Version) -> Option<&ModelImage> {
        self.versions.get(&(nif_name.to_string(), version.clone())).and_then(|id| self.models.get(id))
    }

    pub fn blob(&self, model_id: &str) -> Result<&[u8], CatalogError> {
        let image = self.model(model_id).ok_or_else(|| CatalogError::UnknownModel(model_id.into()))?;
        self.blobs
            .get(&image.blob_ref)
            .map(Vec::as_slice)
            .ok_or_else(|| CatalogError::Corrupt(format!("blob {} missing", image.blob_ref)))
    }

    /// All images, ordered by (name, version).
    pub fn models(&self) -> impl Iterator<Item = &ModelImage> {
        self.versions.values().filter_map(|id| self.models.get(id))
    }

    pub fn versions_of(&self, nif_name: &str) -> Vec<&ModelImage> {
        self.models().filter(|m| m.nif_name == nif_name).collect()
    }

    pub fn exists(&self, nif_name: &str, constraint: &VersionConstraint) -> bool {
        self.models().any(|m| m.nif_name == nif_name && constraint.matches(&m.version))
    }

    /// Newest image matching the name and constraint.
    pub fn latest(&self, nif_name: &str, constraint: &VersionConstraint) -> Option<&ModelImage> {
        self.models().filter(|m| m.nif_name == nif_name && constraint.matches(&m.version)).last()
    }

    pub fn query_candidates(&self, nif_name: &str, req: &Requirements) -> Vec<ModelImage> {
        let mut out: Vec<ModelImage> =
            self.models().filter(|m| m.nif_name == nif_name && req.accepts(m)).cloned().collect();
        out.sort_by(candidate_order);
        out
    }

    /// Stores a valid descriptor. The entry id is its content digest, so
    /// onboarding the same document twice yields the same id.
    pub fn onboard(&mut self, desc: Descriptor, now: Millis) -> Result<String, CatalogError> {
        let report = validate_descriptor(&desc);
        if !report.valid {
            return Err(CatalogError::InvalidDescriptor(report));
        }
        let id = desc.computed_digest();
        if self.entries.contains_key(&id) {
            return Ok(id);
        }
        let key = (desc.kind().to_string(), desc.name().to_string(), desc.version().clone());
        if self.entry_versions.contains_key(&key) {
            return Err(CatalogError::VersionConflict { name: desc.name().into(), version: desc.version().clone() });
        }
        if let Some(store) = &self.store {
            store.write_descriptor(&id, &desc)?;
            store.append(&IndexRecord {
                op: "onboard".into(),
                id: id.clone(),
                name: desc.name().into(),
                version: desc.version().to_string(),
                digest: id.clone(),
                t: now,
            })?;
        }
        self.insert_entry(CatalogEntry { id: id.clone(), descriptor: desc, onboarded_at: now });
        Ok(id)
    }

    fn insert_entry(&mut self, entry: CatalogEntry) {
        let d = &entry.descriptor;
        self.entry_versions.insert((d.kind().into(), d.name().into(), d.version().clone()), entry.id.clone());
        self.entries.insert(entry.id.clone(), entry);
    }

    pub fn entry(&self, id: &str) -> Option<&CatalogEntry> {
        self.entries.get(id)
    }

    /// Entries ordered by (kind, name, version).
    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entry_versions.values().filter_map(|id| self.entries.get(id))
    }

    /// Newest onboarded NIFD with this name satisfying the constraint.
    pub fn nifd(&self, name: &str, constraint: &VersionConstraint) -> Option<&NifDescriptor> {
        self.entries()
            .filter_map(|e| match &e.descriptor {
                Descriptor::Nif(d) if d.name == name && constraint.matches(&d.version) => Some(d),
                _ => None,
            })
            .last()
    }

    /// Looks a NISD up by entry id, or by name (newest version).
    pub fn nisd(&self, id_or_name: &str) -> Option<(&str, &NisDescriptor)> {
        if let Some(CatalogEntry { id, descriptor: Descriptor::Nis(d), .. }) = self.entries.get(id_or_name) {
            return Some((id.as_str(), d));
        }
        self.entries()
            .filter_map(|e| match &e.descriptor {
                Descriptor::Nis(d) if d.name == id_or_name => Some((e.id.as_str(), d)),
                _ => None,
            })
            .last()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::parse_descriptor;

    pub(crate) fn draft(name: &str, version: &str, score: f64) -> ModelDraft {
        ModelDraft {
            nif_name: name.into(),
            version: Version::parse(version).unwrap(),
            metric: LearningMetric::Accuracy,
            test_score: score,
            platform: Platform::Cpu,
            input_format: "timeseries/f64".into(),
            dependencies: vec![Dependency { name: "numpy".into(), version: "==1.26.0".parse().unwrap() }],
            aux_scores: BTreeMap::new(),
            created_at: 0,
        }
    }

    #[test]
    fn register_is_idempotent() {
        let mut c = Catalog::in_memory();
        let a = c.register_model(draft("nif1", "1.0.0", 0.9), b"blob").unwrap();
        let b = c.register_model(draft("nif1", "1.0.0", 0.9), b"blob").unwrap();
        assert_eq!(a, b);
        assert_eq!(c.models().count(), 1);
    }

    #[test]
    fn same_version_different_blob_conflicts() {
        let mut c = Catalog::in_memory();
        c.register_model(draft("nif1", "1.0.0", 0.9), b"blob").unwrap();
        let err = c.register_model(draft("nif1", "1.0.0", 0.9), b"other").unwrap_err();
        assert!(matches!(err, CatalogError::VersionConflict { .. }));
    }

    #[test]
    fn two_versions_listed() {
        let mut c = Catalog::in_memory();
        let a = c.register_model(draft("nif1", "1.0.0", 0.9), b"a").unwrap();
        let b = c.register_model(draft("nif1", "1.1.0", 0.9), b"b").unwrap();
        assert_ne!(a, b);
        let listed: Vec<_> = c.versions_of("nif1").iter().map(|m| m.model_id.clone()).collect();
        assert_eq!(listed, vec![a, b]);
    }

    #[test]
    fn exists_with_constraints() {
        let mut c = Catalog::in_memory();
        assert!(!c.exists("nif2", &VersionConstraint::Any));
        c.register_model(draft("nif2", "1.0.0", 0.9), b"x").unwrap();
        assert!(c.exists("nif2", &">=1.0.0".parse().unwrap()));
        assert!(!c.exists("nif2", &">=2.0.0".parse().unwrap()));
    }

    #[test]
    fn candidates_filtered_and_ordered() {
        let mut c = Catalog::in_memory();
        c.register_model(draft("nif1", "1.0.0", 0.87), b"a").unwrap();
        c.register_model(draft("nif1", "1.1.0", 0.91), b"b").unwrap();
        let mut gpu = draft("nif1", "2.0.0", 0.99);
        gpu.platform = Platform::Gpu;
        c.register_model(gpu, b"c").unwrap();

        let req = Requirements {
            input_format: Some("timeseries/f64".into()),
            platform: Some(Platform::Cpu),
            dependency_constraints: vec![Dependency { name: "numpy".into(), version: ">=1.20.0".parse().unwrap() }],
            min_performance: Some(0.85),
        };
        let scores: Vec<f64> = c.query_candidates("nif1", &req).iter().map(|m| m.test_score).collect();
        assert_eq!(scores, vec![0.91, 0.87]);

        let strict = Requirements { min_performance: Some(0.95), ..req.clone() };
        assert!(c.query_candidates("nif1", &strict).is_empty());

        let newer_numpy = Requirements {
            dependency_constraints: vec![Dependency { name: "numpy".into(), version: ">=2.0.0".parse().unwrap() }],
            ..req
        };
        assert!(c.query_candidates("nif1", &newer_numpy).is_empty());
    }

    #[test]
    fn loss_metric_orientation() {
        let mut c = Catalog::in_memory();
        for (v, s) in [("1.0.0", 0.2), ("1.1.0", 0.05)] {
            let mut d = draft("mse", v, s);
            d.metric = LearningMetric::Mse;
            c.register_model(d, v.as_bytes()).unwrap();
        }
        let req = Requirements { min_performance: Some(0.1), ..Requirements::any() };
        let got: Vec<f64> = c.query_candidates("mse", &req).iter().map(|m| m.test_score).collect();
        assert_eq!(got, vec![0.05]);
    }

    const NISD: &str = r#"{"kind":"NISD","metadata":{"name":"solo","version":"1.0.0"},
        "spec":{"objective":"o","nifs":[{"name":"nif1"}]}}"#;

    #[test]
    fn onboard_content_addressed() {
        let mut c = Catalog::in_memory();
        let Descriptor::Nis(d) = parse_descriptor(NISD).unwrap() else { panic!() };
        let d = Descriptor::Nis(d.sealed());
        let a = c.onboard(d.clone(), 5).unwrap();
        let b = c.onboard(d, 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(c.entries().count(), 1);
        assert_eq!(c.nisd("solo").unwrap().0, a);
        assert!(c.nisd(&a).is_some());
    }

    #[test]
    fn onboard_invalid_rejected() {
        let mut c = Catalog::in_memory();
        let d = parse_descriptor(NISD).unwrap(); // unsealed
        assert!(matches!(c.onboard(d, 0), Err(CatalogError::InvalidDescriptor(_))));
    }

    #[test]
    fn reopen_rebuilds_index() {
        let dir = tempfile::tempdir().unwrap();
        let (mid, eid) = {
            let mut c = Catalog::open(dir.path()).unwrap();
            let mid = c.register_model(draft("nif1", "1.0.0", 0.9), b"blob").unwrap();
            let Descriptor::Nis(d) = parse_descriptor(NISD).unwrap() else { panic!() };
            let eid = c.onboard(Descriptor::Nis(d.sealed()), 3).unwrap();
            (mid, eid)
        };
        let c = Catalog::open(dir.path()).unwrap();
        assert_eq!(c.model(&mid).unwrap().test_score, 0.9);
        assert_eq!(c.blob(&mid).unwrap(), b"blob");
        assert_eq!(c.entry(&eid).unwrap().onboarded_at, 3);
        let log = std::fs::read_to_string(dir.path().join("catalog/index.log")).unwrap();
        assert_eq!(log.lines().count(), 2);
    }
}
