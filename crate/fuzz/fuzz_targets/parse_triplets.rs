#![no_main]

use corrrm::data::{parse_triplets, IdMode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for mode in [IdMode::Dense, IdMode::Dictionary] {
        if let Ok(parsed) = parse_triplets(text, mode, None) {
            // canonical output must parse back to the same matrix
            let again = parse_triplets(&parsed.matrix.to_tsv(), IdMode::Dense, None).unwrap();
            assert_eq!(again.matrix, parsed.matrix);
        }
    }
});
