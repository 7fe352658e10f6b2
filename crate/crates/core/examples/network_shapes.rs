//! Layer output extents and parameter counts of the desk and paper network presets.

use ulmcorr::cvcnn::{build_model, ScalePreset};

fn main() -> ulmcorr::Result<()> {
    for scale in [ScalePreset::Desk, ScalePreset::Paper] {
        let model = build_model(scale, 0)?;
        println!("{scale:?}: {} complex parameters", model.num_parameters());
        for (name, dims) in model.shape_chain()? {
            println!("  {name:<24} {dims:?}");
        }
    }
    Ok(())
}
