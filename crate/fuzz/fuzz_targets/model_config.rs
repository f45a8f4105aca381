#![no_main]

use kcm::io::{parse_table, ModelConfig};
use libfuzzer_sys::fuzz_target;

const TABLE: &[u8] = b"y,x1,x2,z1\n1,0.5,-1,2\n0.3,1.5,0.2,-1\n-2,0.1,0.7,0.4\n";

fuzz_target!(|data: &[u8]| {
    let Ok(cfg) = ModelConfig::from_json(data) else {
        return;
    };
    let table = parse_table(TABLE).unwrap();
    let Ok(dataset) = cfg.dataset(&table) else {
        return;
    };
    if let Ok(model) = cfg.model() {
        if let Ok(r) = model.residuals(&dataset) {
            assert_eq!(r.nrows(), 3);
        }
    }
    let _ = cfg.template(&dataset);
    let _ = cfg.kernel.resolve(&dataset.x());
});
