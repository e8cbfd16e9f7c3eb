#![no_main]
use eci_retrieval::corpus::{parse_corpus, write_corpus};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(samples) = parse_corpus(data) {
        let again = parse_corpus(&write_corpus(&samples)).expect("written corpus parses");
        assert_eq!(samples, again);
    }
});
