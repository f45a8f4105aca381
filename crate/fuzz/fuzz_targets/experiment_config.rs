#![no_main]

use kcm::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = ExperimentConfig::from_json(data) {
        assert!(cfg.validate().is_ok());
        assert!(cfg.trials >= 1 && cfg.b >= 1);
        assert!(cfg.alpha > 0.0 && cfg.alpha < 1.0);
        let _ = cfg.theta0();
        if let (Some(&n), Some(&delta)) = (cfg.n_grid.first(), cfg.delta_grid.first()) {
            let _ = cfg.cell_seed(n, delta);
        }
    }
});
