#![no_main]

use kcm::io::{parse_table, ModelConfig};
use kcm::mmr::{h_matrix, mmr_u, mmr_v};
use libfuzzer_sys::fuzz_target;

// Input: model config JSON, a NUL byte, then CSV.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else {
        return;
    };
    let (json, csv) = (&data[..split], &data[split + 1..]);
    let Ok(cfg) = ModelConfig::from_json(json) else {
        return;
    };
    let Ok(table) = parse_table(csv) else { return };
    if table.values.nrows() > 64 {
        return;
    }
    let Ok(dataset) = cfg.dataset(&table) else {
        return;
    };
    let Ok(model) = cfg.model() else { return };
    let Ok(spec) = cfg.kernel.resolve(&dataset.x()) else {
        return;
    };
    let Ok(h) = h_matrix(&model, &dataset, &spec) else {
        return;
    };
    let v = mmr_v(&h);
    if let Ok(u) = mmr_u(&h) {
        let n = h.n() as f64;
        let lhs = n * n * v.value;
        let rhs = n * (n - 1.0) * u.value + h.matrix().trace();
        if lhs.is_finite() && rhs.is_finite() {
            assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()).max(1.0));
        }
    }
});
