#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = synaptor::io::parse_raw_synapses("fuzz", data);
    if let Ok(set) = synaptor::io::parse_synapse_set("fuzz", data) {
        let encoded = synaptor::io::encode_synapse_set(&set);
        let again = synaptor::io::parse_synapse_set("fuzz", &encoded).expect("round trip");
        assert_eq!(set, again);
    }
});
