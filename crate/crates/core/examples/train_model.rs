//! Trains three versions of one NIF on simulated telemetry, then asks the
//! catalog for the ones that reached the target.
//!
//! cargo run --example train_model -- 0.85

use semver::Version;

use ni_stratum::catalog::{Catalog, Requirements};
use ni_stratum::descriptors::{DataSpec, LearningMetric, Platform};
use ni_stratum::pipelines::{decode_artifact, PipelineSpec, Pipelines};
use ni_stratum::simenv::{MetricKind, NodeConfig, Resources, SimEnv, SourceConfig, Tier};

fn main() -> anyhow::Result<()> {
    let target: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.9);
    let node = NodeConfig {
        id: "edge-1".into(),
        tier: Tier::Edge,
        capacity: Resources { cpu_millicores: 4000, mem_mib: 8192, gpu: 0, link_bw_mbps: 1000 },
        base_latency_ms: None,
    };
    let source = SourceConfig {
        id: "edge-1.cpu".into(),
        node: Some("edge-1".into()),
        service: None,
        kind: MetricKind::CpuLoad,
        mean: 0.35,
        std: 0.05,
        phi: 0.8,
        period_ms: 1000,
        spikes: vec![],
    };
    let env = SimEnv::new(7, &[node], &[source], &[])?;

    let mut catalog = Catalog::in_memory();
    let mut pipelines = Pipelines::new();
    for (minor, seed) in [(0, 1), (1, 2), (2, 3)] {
        let spec = PipelineSpec {
            nif_name: "anomaly-scaler".into(),
            version: Version::new(1, minor, 0),
            data_spec: DataSpec {
                source_ids: vec!["edge-1.cpu".into()],
                input_format: "timeseries/f64".into(),
                sampling_period_ms: 1000,
            },
            metric: LearningMetric::Accuracy,
            threshold_upper: target,
            epoch_budget: 100,
            seed,
            platform: Platform::Cpu,
            dependencies: vec![],
            params: [("anomalyThreshold".to_string(), 0.8)].into(),
        };
        let r = pipelines.run(spec, &mut catalog, &env, 0)?;
        println!("{} 1.{minor}.0: {:?} after {} epochs, score {:.4}", r.run_id, r.status, r.epochs, r.final_score);
        if let Some(id) = &r.model_id {
            let a = decode_artifact(catalog.blob(id)?)?;
            println!("  {id} curve s0={:.3} smax={:.3} tau={:.1}", a.curve.s0, a.curve.smax, a.curve.tau);
        }
    }

    let req = Requirements { min_performance: Some(target), ..Requirements::any() };
    for m in catalog.query_candidates("anomaly-scaler", &req) {
        println!("candidate {} v{} score {:.4}", m.model_id, m.version, m.test_score);
    }
    Ok(())
}
