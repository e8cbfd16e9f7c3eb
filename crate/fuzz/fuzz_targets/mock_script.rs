#![no_main]
use eci_retrieval::llm_gateway::MockScript;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(script) = MockScript::parse(data) {
        let _ = script.respond("TEXT: fire, EVENT X: fire");
    }
});
