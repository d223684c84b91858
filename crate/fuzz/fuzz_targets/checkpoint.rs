#![no_main]
use libfuzzer_sys::fuzz_target;
use protdat::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let _ = Checkpoint::parse(data);
});
