#![no_main]

use kcm::io::{parse_table, table_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = parse_table(data) {
        assert_eq!(table.values.ncols(), table.names.len());
        assert!(table.values.nrows() > 0);
        assert!(table.values.iter().all(|v| v.is_finite()));
        // names containing separators or quotes do not survive the plain writer
        if table
            .names
            .iter()
            .all(|n| !n.contains([',', '"', '\n', '\r']) && n.trim() == n)
        {
            let again = parse_table(table_csv(&table.names, &table.values).as_bytes())
                .expect("round trip parses");
            assert_eq!(again.values, table.values);
        }
    }
});
