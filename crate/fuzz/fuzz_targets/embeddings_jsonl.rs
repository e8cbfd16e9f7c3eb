#![no_main]
use eci_retrieval::corpus::parse_embeddings;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(store) = parse_embeddings(data) {
        assert!(store.dimension() > 0 || store.is_empty());
    }
});
