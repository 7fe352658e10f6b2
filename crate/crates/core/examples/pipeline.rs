//! End-to-end run on the default aberrated phantom: `pipeline [estimator] [out]`.

use std::time::Instant;

use ulmcorr::pipeline::{run_pipeline, EstimatorKind, RunConfig};

fn main() -> ulmcorr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let estimator: EstimatorKind = std::env::args().nth(1).as_deref().unwrap_or("ground-truth").parse()?;
    let out = std::env::args().nth(2).unwrap_or_else(|| "target/pipeline-example".into());
    let cfg = RunConfig {
        estimator,
        out: out.into(),
        ..RunConfig::default()
    };
    let t = Instant::now();
    let report = run_pipeline(&cfg)?;
    for r in &report.rows {
        println!("{:<28} {:>14.6e} {}", r.metric, r.value, r.units);
    }
    println!("finished in {:.1?}", t.elapsed());
    Ok(())
}
