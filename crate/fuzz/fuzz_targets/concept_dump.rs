#![no_main]
use eci_retrieval::concept_graph::{parse_dump, shortest_path};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let (graph, stats) = parse_dump(data);
    assert!(stats.kept <= stats.rows);
    let ids: Vec<String> = graph.node_ids().take(2).map(str::to_string).collect();
    if let [a, b] = &ids[..] {
        let self_path = shortest_path(&graph, a, a, 0).unwrap().expect("self path");
        assert!(self_path.is_empty());
        if let Some(p) = shortest_path(&graph, a, b, 4).unwrap() {
            assert!(p.len() <= 4);
        }
    }
});
