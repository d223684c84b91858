#![no_main]
use libfuzzer_sys::fuzz_target;
use protdat::evaluation::{matrix_from_csv, matrix_to_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = matrix_from_csv(text) {
            let again = matrix_from_csv(&matrix_to_csv(&m)).expect("written CSV parses");
            assert_eq!(again.shape(), m.shape());
        }
    }
});
