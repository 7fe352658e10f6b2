//! Simulates a short flow-phantom sequence, localizes and tracks the bubbles, and scores the map by FRC.

use ulmcorr::pipeline::{beamform_frames, localize, simulate_stage, split_frc, RunConfig};
use ulmcorr::ulm::saturation_curve;

fn main() -> ulmcorr::Result<()> {
    let frames: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut cfg = RunConfig { out: "target/ulm-example".into(), ..RunConfig::default() };
    cfg.phantom.num_frames = frames;
    let lam = cfg.wavelength();
    let seq = simulate_stage(&cfg)?;
    let images = beamform_frames(&cfg, &seq.frames, None)?;
    let out = localize(&cfg, &images)?;
    println!("{} detections over {frames} frames, {} tracks", out.detections, out.tracks.len());
    for t in out.tracks.iter().take(10) {
        let (a, b) = (t.points.first().unwrap(), t.points.last().unwrap());
        println!(
            "track {:3}  {:3} frames  ({:+.2}, {:.2}) -> ({:+.2}, {:.2}) wavelengths",
            t.id,
            t.len(),
            a.x / lam,
            a.z / lam,
            b.x / lam,
            b.z / lam
        );
    }
    if let Some(&(n, px)) = saturation_curve(&out.tracks, &cfg.image_grid()?, cfg.ulm.density_factor)?.last() {
        println!("{px} illuminated pixels after {n} tracks");
    }
    match split_frc(&cfg, &out.tracks)?.and_then(|f| f.resolution) {
        Some(r) => println!("FRC resolution {:.1} um", r * 1e6),
        None => println!("FRC curve never crosses the threshold"),
    }
    Ok(())
}
