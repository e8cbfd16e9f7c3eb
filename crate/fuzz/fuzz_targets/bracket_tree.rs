#![no_main]
use eci_retrieval::syntax_metric::DepTree;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(tree) = DepTree::from_brackets(data) {
        let again = DepTree::from_brackets(&tree.to_string()).expect("printed tree parses");
        assert_eq!(tree, again);
    }
});
