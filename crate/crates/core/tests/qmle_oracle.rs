mod common;

use dpdmon::garch::{self, GarchFitOptions};
use dpdmon::simlab::simulate_garch_path;
use dpdmon::{Alpha, GarchParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn likelihood_branch_matches_independent_qmle() {
    let truth = GarchParams::new(0.2, &[0.2], &[0.6]).unwrap();
    for seed in [11, 12, 13] {
        let x = simulate_garch_path(&truth, 1500, 500, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let fit = garch::fit(&x, Alpha::ZERO, 1, 1, &GarchFitOptions::default()).unwrap();
        let oracle = common::qmle_garch11(&x);
        let ours = fit.params.as_slice();
        for i in 0..3 {
            assert!((ours[i] - oracle[i]).abs() < 1e-5, "seed {seed}: {ours:?} vs {oracle:?}");
        }
        // same objective value up to the factor convention
        let f = common::qmle_objective(&x, ours[0], ours[1], ours[2]);
        assert!((f - fit.objective).abs() < 1e-12 * f.abs().max(1.0), "{f} vs {}", fit.objective);
    }
}
