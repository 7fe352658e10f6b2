//! Prints the default run configuration as TOML with its hash, then the paper-scale overrides.

use ulmcorr::pipeline::RunConfig;

fn main() -> ulmcorr::Result<()> {
    let desk = RunConfig::default();
    desk.validate()?;
    println!("{}", desk.canonical()?);
    println!("# hash {}", desk.hash()?);
    let paper = desk.paper_scale();
    paper.validate()?;
    println!(
        "# paper scale: {} elements, {} angles, {} training samples, hash {}",
        paper.probe.num_elements,
        paper.scheme.num_angles,
        paper.training_set.num_samples,
        paper.hash()?
    );
    Ok(())
}
