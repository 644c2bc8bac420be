#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(graph) = synaptor::io::parse_graph_csv("fuzz", data) {
        let encoded = synaptor::io::encode_graph_csv(&graph, false);
        let again = synaptor::io::parse_graph_csv("fuzz", &encoded).expect("round trip");
        assert_eq!(graph, again);
    }
});
