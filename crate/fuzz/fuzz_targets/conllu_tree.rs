#![no_main]
use eci_retrieval::syntax_metric::{build_tree, tree_edit_distance, LabelWeights};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(tree) = build_tree(data) {
        assert_eq!(tree.postorder().len(), tree.size());
        assert_eq!(tree_edit_distance(&tree, &tree, &LabelWeights::default()), 0);
    }
});
