#![no_main]
use eci_retrieval::path_metric::{Direction, RelationTemplates};
use eci_retrieval::syntax_metric::LabelWeights;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(t) = RelationTemplates::from_tsv(data) {
        for r in t.relations() {
            let _ = t.phrase(r, Direction::Inverse);
        }
    }
    if let Ok(w) = LabelWeights::from_tsv(data) {
        for (label, weight) in w.iter() {
            assert_eq!(w.weight(label), weight);
        }
    }
});
