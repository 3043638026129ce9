use std::collections::{BTreeMap, BTreeSet};

use semver::Version;
use serde::{Deserialize, Serialize};

use super::{
    check_kind, parse_document, DescriptorError, Metadata, ValidationReport, VersionConstraint, API_VERSION,
    INTEGRITY_ANNOTATION,
};
use crate::canonical;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NifRef {
    pub name: String,
    #[serde(default = "any_version")]
    pub version: VersionConstraint,
}

fn any_version() -> VersionConstraint {
    VersionConstraint::Any
}

/// Directed producer → consumer link between two member NIFs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    #[serde(default = "default_link_bw")]
    pub bandwidth_mbps: u64,
}

fn default_link_bw() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq)]
pub struct NisDescriptor {
    pub name: String,
    pub version: Version,
    pub objective: Option<String>,
    pub nif_refs: Vec<NifRef>,
    pub links: Vec<LinkSpec>,
    pub external_knowledge_refs: Vec<String>,
    /// Shared-knowledge policy entries, in the rule grammar.
    pub policies: Vec<String>,
    pub extra_labels: BTreeMap<String, String>,
    pub extra_annotations: BTreeMap<String, String>,
    pub integrity: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct NisDocument {
    #[serde(default = "default_api_version")]
    api_version: String,
    kind: String,
    metadata: Metadata,
    #[serde(default)]
    spec: NisSpecDoc,
}

fn default_api_version() -> String {
    API_VERSION.to_string()
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct NisSpecDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objective: Option<String>,
    #[serde(default)]
    nifs: Vec<NifRef>,
    #[serde(default)]
    links: Vec<LinkSpec>,
    #[serde(default)]
    external_knowledge: Vec<String>,
    #[serde(default)]
    policies: Vec<String>,
}

/// Parses a NISD, checking link references and the embedded digest.
///
/// An absent digest is accepted here and reported by validation instead.
pub fn parse_nisd(text: &str) -> Result<NisDescriptor, DescriptorError> {
    let value = parse_document(text)?;
    check_kind(&value, "NISD")?;
    let doc: NisDocument = serde_json::from_value(value).map_err(|e| DescriptorError::Parse(e.to_string()))?;
    let desc = NisDescriptor::from_document(doc)?;
    if let Some(stored) = &desc.integrity {
        let computed = desc.computed_digest();
        if *stored != computed {
            return Err(DescriptorError::IntegrityMismatch { stored: stored.clone(), computed });
        }
    }
    Ok(desc)
}

impl NisDescriptor {
    fn from_document(doc: NisDocument) -> Result<Self, DescriptorError> {
        let (name, version) = doc.metadata.identity()?;
        let mut extra_annotations = doc.metadata.annotations;
        let integrity = extra_annotations.remove(INTEGRITY_ANNOTATION);
        let desc = NisDescriptor {
            name,
            version,
            objective: doc.spec.objective,
            nif_refs: doc.spec.nifs,
            links: doc.spec.links,
            external_knowledge_refs: doc.spec.external_knowledge,
            policies: doc.spec.policies,
            extra_labels: doc.metadata.labels,
            extra_annotations,
            integrity,
        };
        desc.check_links()?;
        Ok(desc)
    }

    /// Distinct member NIF names in declaration order.
    pub fn member_names(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.nif_refs.iter().filter(|r| seen.insert(r.name.as_str())).map(|r| r.name.clone()).collect()
    }

    fn check_links(&self) -> Result<(), DescriptorError> {
        let members: BTreeSet<&str> = self.nif_refs.iter().map(|r| r.name.as_str()).collect();
        for link in &self.links {
            for end in [&link.from, &link.to] {
                if !members.contains(end.as_str()) {
                    return Err(DescriptorError::DanglingLink(end.clone()));
                }
            }
        }
        if members.len() > 1 {
            // undirected reachability from the first member
            let mut reached = BTreeSet::from([*members.iter().next().unwrap()]);
            loop {
                let before = reached.len();
                for link in &self.links {
                    if reached.contains(link.from.as_str()) || reached.contains(link.to.as_str()) {
                        reached.insert(link.from.as_str());
                        reached.insert(link.to.as_str());
                    }
                }
                if reached.len() == before {
                    break;
                }
            }
            if reached.len() != members.len() {
                return Err(DescriptorError::Invariant("NIS link graph is not connected".into()));
            }
        }
        Ok(())
    }

    fn to_document(&self, integrity: Option<&str>) -> NisDocument {
        let mut annotations = self.extra_annotations.clone();
        if let Some(d) = integrity {
            annotations.insert(INTEGRITY_ANNOTATION.to_string(), d.to_string());
        }
        NisDocument {
            api_version: API_VERSION.to_string(),
            kind: "NISD".into(),
            metadata: Metadata {
                name: Some(self.name.clone()),
                version: Some(self.version.to_string()),
                labels: self.extra_labels.clone(),
                annotations,
            },
            spec: NisSpecDoc {
                objective: self.objective.clone(),
                nifs: self.nif_refs.clone(),
                links: self.links.clone(),
                external_knowledge: self.external_knowledge_refs.clone(),
                policies: self.policies.clone(),
            },
        }
    }

    pub fn to_canonical_json(&self) -> String {
        canonical::to_canonical_pretty(&self.to_document(self.integrity.as_deref()))
    }

    pub fn computed_digest(&self) -> String {
        canonical::digest_of(&self.to_document(Some("")))
    }

    pub fn seal(&mut self) {
        self.integrity = Some(self.computed_digest());
    }

    pub fn sealed(mut self) -> Self {
        self.seal();
        self
    }

    pub fn validate(&self) -> ValidationReport {
        let mut missing = Vec::new();
        if self.objective.as_deref().is_none_or(str::is_empty) {
            missing.push("objective".to_string());
        }
        if self.nif_refs.is_empty() {
            missing.push("nif_refs".to_string());
        }
        ValidationReport::new(missing, self.integrity.as_deref(), &self.computed_digest())
    }
}
