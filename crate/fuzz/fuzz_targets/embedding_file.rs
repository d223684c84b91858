#![no_main]
use libfuzzer_sys::fuzz_target;
use protdat::tokenizer::EmbeddingStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = EmbeddingStore::parse(data) {
        let again = EmbeddingStore::parse(&store.to_bytes()).expect("re-encoded store parses");
        assert_eq!(again.to_bytes(), store.to_bytes());
    }
});
