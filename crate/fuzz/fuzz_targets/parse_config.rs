#![no_main]

use libfuzzer_sys::fuzz_target;
use regscatter::io::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = parse_config(text) {
        assert!(map.keys().all(|k| !k.is_empty() && !k.contains('_')));
    }
});
