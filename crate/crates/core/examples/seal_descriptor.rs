//! Prints the integrity digest a descriptor file should carry under
//! `metadata.annotations."daemon.integrity.sha256"`.
//!
//! cargo run --example seal_descriptor -- scenarios/descriptors/relocator.yaml

use ni_stratum::descriptors::{parse_descriptor, validate_descriptor};

fn main() -> anyhow::Result<()> {
    for path in std::env::args().skip(1) {
        let text = std::fs::read_to_string(&path)?;
        let desc = parse_descriptor(&text)?;
        let report = validate_descriptor(&desc);
        println!("{path}: {} {} digest {}", desc.kind(), desc.name(), desc.computed_digest());
        println!("  valid: {} missing: {:?}", report.valid, report.missing_mandatory);
    }
    Ok(())
}
