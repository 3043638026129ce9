//! Version constraints for NIF references and library dependencies.
//!
//! Only exact (`==`) and minimum (`>=`) constraints are understood. A bare
//! version string is treated as exact, an empty string or `*` as "any".

use std::fmt;
use std::str::FromStr;

use semver::Version;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::DescriptorError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VersionConstraint {
    Any,
    Exact(Version),
    AtLeast(Version),
}

impl VersionConstraint {
    pub fn matches(&self, version: &Version) -> bool {
        match self {
            VersionConstraint::Any => true,
            VersionConstraint::Exact(v) => v == version,
            VersionConstraint::AtLeast(v) => version >= v,
        }
    }

    /// The version named by the constraint, if any.
    pub fn base(&self) -> Option<&Version> {
        match self {
            VersionConstraint::Any => None,
            VersionConstraint::Exact(v) | VersionConstraint::AtLeast(v) => Some(v),
        }
    }
}

impl FromStr for VersionConstraint {
    type Err = DescriptorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "*" {
            return Ok(VersionConstraint::Any);
        }
        let (ctor, rest): (fn(Version) -> Self, &str) = if let Some(rest) = s.strip_prefix(">=") {
            (VersionConstraint::AtLeast, rest)
        } else if let Some(rest) = s.strip_prefix("==") {
            (VersionConstraint::Exact, rest)
        } else {
            (VersionConstraint::Exact, s)
        };
        parse_version(rest.trim()).map(ctor)
    }
}

impl fmt::Display for VersionConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VersionConstraint::Any => f.write_str("*"),
            VersionConstraint::Exact(v) => write!(f, "=={v}"),
            VersionConstraint::AtLeast(v) => write!(f, ">={v}"),
        }
    }
}

impl Serialize for VersionConstraint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VersionConstraint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn parse_version(s: &str) -> Result<Version, DescriptorError> {
    Version::parse(s.trim()).map_err(|e| DescriptorError::Parse(format!("bad version {s:?}: {e}")))
}
