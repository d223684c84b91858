#![no_main]
use libfuzzer_sys::fuzz_target;
use protdat::generation::{parse_fasta, write_fasta};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = parse_fasta(text) {
            // a '>' wrapped to the start of a line would read back as a header
            if records.iter().all(|r| !r.sequence.contains('>')) {
                let again = parse_fasta(&write_fasta(&records)).expect("written FASTA parses");
                assert_eq!(again.iter().map(|r| &r.sequence).collect::<Vec<_>>(), records.iter().map(|r| &r.sequence).collect::<Vec<_>>());
            }
        }
    }
});
