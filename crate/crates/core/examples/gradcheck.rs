//! Finite-difference check of the full objective (task + global + segment)
//! on a two-sample toy batch.

use mlalign::alignment::AlignmentConfig;
use mlalign::model::PARAM_NAMES;
use mlalign::trainer::check_combined_gradient;

fn main() -> mlalign::Result<()> {
    let cfg = AlignmentConfig { lambda1: 1.0, lambda2: 1.0, ..AlignmentConfig::default() };
    for seed in 0..3 {
        let r = check_combined_gradient(&cfg, seed)?;
        println!(
            "seed {seed}: {} coordinates, max relative error {:.2e} at {}[{}]",
            r.coordinates, r.max_rel_error, PARAM_NAMES[r.worst_param], r.worst_index
        );
    }
    Ok(())
}
