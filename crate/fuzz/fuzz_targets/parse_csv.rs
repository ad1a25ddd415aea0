#![no_main]

use libfuzzer_sys::fuzz_target;
use regscatter::io::{parse_csv, write_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((header, x)) = parse_csv(text) {
        assert!(x.n() > 0);
        // a parsed matrix must survive a write/read round trip
        let again = parse_csv(&write_csv(&x, header.as_deref())).expect("round trip parses");
        assert_eq!(again.1.rows(), x.rows());
    }
});
