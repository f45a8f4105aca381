#![no_main]

use kcm::io::parse_table;
use kcm::kernels::{gram, KernelConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(cfg) = KernelConfig::from_json(data) else {
        return;
    };
    let x = parse_table(b"a,b\n0,1\n0.5,-0.3\n2,0.1\n-1,1.2\n")
        .unwrap()
        .values;
    if let Ok(spec) = cfg.resolve(&x) {
        let g = gram(&spec, &x).expect("resolved kernels evaluate");
        assert_eq!(g, g.transpose());
    }
});
