mod common;

use common::{gradient_check, GradInstance};
use dga_adapt::model::CnnConfig;

#[test]
fn every_parameter_of_a_small_network_matches_finite_differences() {
    let config = CnnConfig {
        conv_filters: vec![3, 4],
        fc_widths: vec![6, 5],
        dropout: 0.5,
    };
    for seed in 0..3 {
        let inst = GradInstance::random(&config, seed);
        for c in gradient_check(&inst, None) {
            assert!(
                c.relative_error < 1e-4,
                "seed {seed} segment {}: relative error {}",
                c.name,
                c.relative_error
            );
            assert!(c.checked > 0, "segment {} had no smooth coordinates", c.name);
        }
    }
}

#[test]
fn default_network_sampled_gradient_check() {
    let inst = GradInstance::random(&CnnConfig::default(), 42);
    for c in gradient_check(&inst, Some(25)) {
        println!(
            "{} err {:.2e} checked {} skipped {}",
            c.name, c.relative_error, c.checked, c.skipped_kinks
        );
        assert!(
            c.relative_error < 1e-4,
            "segment {}: relative error {}",
            c.name,
            c.relative_error
        );
    }
}
