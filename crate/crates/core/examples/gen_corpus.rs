use synaptor::io;
use synaptor::psd::{PartnerPrediction, SynapseEntry, SynapseSet};
use synaptor::tbar::TbarPrediction;
use synaptor::volume::Point3;
use std::fs;

fn main() {
    let c = |t: &str, n: &str| format!("fuzz/corpus/{t}/{n}");

    for (dtype, bytes_per, name) in [("u8", 1usize, "u8"), ("u32", 4, "u32"), ("f32", 4, "f32")] {
        let hdr = format!(r#"{{"dims":[2,3,2],"dtype":"{dtype}","order":"x-fastest"}}"#);
        fs::write(c("fuzz_volume_header", &format!("seed_{name}.json")), &hdr).unwrap();
        let mut blob = hdr.clone().into_bytes();
        blob.push(0);
        blob.extend(std::iter::repeat(0u8).take(12 * bytes_per));
        fs::write(c("fuzz_volume", &format!("seed_{name}.bin")), blob).unwrap();
    }

    let tbars = vec![
        TbarPrediction { pos: Point3::new(1, 2, 3), confidence: 0.9 },
        TbarPrediction { pos: Point3::new(4, 5, 6), confidence: 0.4 },
    ];
    fs::write(c("fuzz_tbar_json", "seed.json"), io::encode_tbars(&tbars)).unwrap();

    let set = SynapseSet {
        synapses: vec![SynapseEntry {
            tbar: TbarPrediction { pos: Point3::new(3, 3, 3), confidence: 1.0 },
            partners: vec![
                PartnerPrediction { body: 2, confidence: 0.8 },
                PartnerPrediction { body: 5, confidence: 0.3 },
            ],
        }],
    };
    fs::write(c("fuzz_synapse_json", "seed_body.json"), io::encode_synapse_set(&set)).unwrap();
    fs::write(
        c("fuzz_synapse_json", "seed_pos.json"),
        br#"{"synapses":[{"tbar":{"pos":[3,3,3],"confidence":1.0},"partners":[{"pos":[4,3,3],"confidence":0.7}]}]}"#,
    )
    .unwrap();

    let mut graph = synaptor::connectome::ConnectomeGraph::default();
    graph.add(1, 2, 3).unwrap();
    graph.add(2, 7, 1).unwrap();
    fs::write(c("fuzz_graph_csv", "seed_directed.csv"), io::encode_graph_csv(&graph, false)).unwrap();
    fs::write(c("fuzz_graph_csv", "seed_undirected.csv"), io::encode_graph_csv(&graph, true)).unwrap();

    let model = synaptor::mlp::mlp_init(&[4, 3, 1], 0).unwrap();
    fs::write(c("fuzz_model_json", "seed.json"), io::encode_model(&model)).unwrap();

    fs::write(c("fuzz_config_json", "seed_empty.json"), b"{}").unwrap();
    let full = serde_json::to_vec_pretty(&synaptor::config::PipelineConfig::default()).unwrap();
    fs::write(c("fuzz_config_json", "seed_full.json"), full).unwrap();
}
