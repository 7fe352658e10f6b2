//! One aberrated point scatterer beamformed plain and with ground-truth correction, against the
//! unaberrated image. Fast mode aberrates receive only; exact mode aberrates every transmit element too.

use ulmcorr::aberration::{generate_aberration, AberrationConfig};
use ulmcorr::beamform::{das_beamform, make_correction_profile, ImageGrid};
use ulmcorr::geometry::{ProbeGeometry, TransmitScheme};
use ulmcorr::simulator::{FrameSimulator, RecordWindow, Scatterer, SimMode};

fn main() -> ulmcorr::Result<()> {
    let probe = ProbeGeometry::desk();
    let scheme = TransmitScheme::desk(probe.num_elements);
    let lam = probe.wavelength();
    let (x, z) = (0.7 * lam, 30.0 * lam);
    let cfg = AberrationConfig { amp_min: 1.0, rng_seed: 3, ..AberrationConfig::desk() };
    let ab = generate_aberration(&cfg, &probe)?.piston_removed();
    let window = RecordWindow::covering(&probe, &scheme, (-8.0 * lam, 8.0 * lam), (20.0 * lam, 40.0 * lam), 1e-6);
    let grid = ImageGrid::spanning((-6.0 * lam, 6.0 * lam), (24.0 * lam, 36.0 * lam), lam / 4.0)?;
    let target = [Scatterer::unit(x, z)];
    let profile = make_correction_profile(&ab, false);
    println!("scatterer at ({:.2}, {:.2}) wavelengths", x / lam, z / lam);
    for mode in [SimMode::Fast, SimMode::Exact] {
        let clean = FrameSimulator::new(probe.clone(), scheme.clone(), None, mode, window)?;
        let aberrated = FrameSimulator::new(probe.clone(), scheme.clone(), Some(ab.clone()), mode, window)?;
        let reference = das_beamform(&clean.simulate_clean(&target)?, &grid, &probe, &scheme, None)?;
        let iq = aberrated.simulate_clean(&target)?;
        let plain = das_beamform(&iq, &grid, &probe, &scheme, None)?;
        let corrected = das_beamform(&iq, &grid, &probe, &scheme, Some(&profile))?;
        for (name, img) in [("reference", &reference), ("aberrated", &plain), ("corrected", &corrected)] {
            let (px, pz, amp) = img.peak();
            println!(
                "{mode:?} {name:<10} peak ({:+.3}, {:.3}) amplitude {amp:.3e}  nrmse {:.3}",
                px / lam,
                pz / lam,
                img.pixels.rel_error(&reference.pixels)
            );
        }
    }
    Ok(())
}
