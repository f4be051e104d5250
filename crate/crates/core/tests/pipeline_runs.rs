mod common;

use std::fs;

use common::runs::small_config;
use windcollapse::pipeline::{run, run_sample, RunContext, RunOptions, RunStatus};
use windcollapse::reliability::SampleStatus;
use windcollapse::Error;

#[test]
fn small_run_completes_and_tags_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = RunContext::prepare(small_config(dir.path(), 2)).unwrap();
    let status = run(&ctx, &RunOptions::default()).unwrap();
    let RunStatus::Complete(summary) = status else {
        panic!("run did not complete: {status:?}");
    };
    assert_eq!(summary.plan.total(), 24);
    assert_eq!(summary.failed_samples, 0);
    let collapse = summary.estimates.get("system-collapse").unwrap();
    assert!(collapse.rate > 0.0);
    let out = &ctx.config.output_dir;
    for f in ["outcomes.csv", "fragility.csv", "run.log"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.starts_with(&format!("# config-hash: {}", ctx.hash)), "{f} lacks the config hash header");
    }
    let json = fs::read_to_string(out.join("estimates.json")).unwrap();
    assert!(json.contains(&ctx.hash));
    let rows = fs::read_to_string(out.join("outcomes.csv")).unwrap().lines().count();
    assert_eq!(rows, 2 + 24);
}

#[test]
fn resume_under_a_different_configuration_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1);
    let ctx = RunContext::prepare(cfg.clone()).unwrap();
    let opts = RunOptions {
        stop_after: Some(3),
        ..Default::default()
    };
    assert!(matches!(run(&ctx, &opts).unwrap(), RunStatus::Interrupted { computed: 3 }));

    let mut other = cfg;
    other.seed += 1;
    let ctx2 = RunContext::prepare(other).unwrap();
    assert_ne!(ctx.hash, ctx2.hash);
    let resume = RunOptions {
        resume: true,
        ..Default::default()
    };
    assert!(matches!(run(&ctx2, &resume), Err(Error::Checkpoint(_))));
}

#[test]
fn worker_count_does_not_change_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1);
    let mut wide = cfg.clone();
    wide.jobs = 8;
    assert_eq!(cfg.hash().unwrap(), wide.hash().unwrap());
}

#[test]
fn failing_sample_is_marked_as_infrastructure_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1);
    // gravity far beyond the column capacity: the preload cannot converge
    let frame = dir.path().join("frame.toml");
    let text = fs::read_to_string(&frame).unwrap().replace("node = 12\ndead = 80000", "node = 12\ndead = 8e10");
    fs::write(&frame, text).unwrap();
    let ctx = RunContext::prepare(cfg).unwrap();
    let (rec, _) = run_sample(&ctx, 5, 1, true);
    assert_eq!(rec.outcome.status, SampleStatus::FailedInfrastructure);
    assert!(rec.error.is_some());
    assert_eq!(rec.outcome.stratum, 1);
    assert!(rec.outcome.v_h >= ctx.bounds[1] && rec.outcome.v_h < ctx.bounds[2]);
}
