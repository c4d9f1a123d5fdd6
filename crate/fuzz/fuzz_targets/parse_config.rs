#![no_main]

use corrrm::cli::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(map) = parse_config(text) {
        let round: String = map.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        assert_eq!(parse_config(&round).unwrap(), map);
    }
});
