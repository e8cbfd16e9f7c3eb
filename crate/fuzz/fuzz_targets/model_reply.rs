#![no_main]
use eci_retrieval::json_extract::last_field;
use eci_retrieval::pattern::parse_pattern;
use eci_retrieval::reasoner::parse_answer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = parse_pattern(data);
    let answer = parse_answer(data);
    if answer.is_some() {
        assert!(last_field(data, "answer").is_some());
    }
});
