#![no_main]

use corrrm::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cp) = Checkpoint::from_json(text) {
        let again = Checkpoint::from_json(&cp.to_json().unwrap()).unwrap();
        assert_eq!(again, cp);
    }
});
