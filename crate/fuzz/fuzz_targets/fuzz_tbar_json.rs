#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tbars) = synaptor::io::parse_tbars("fuzz", data) {
        // Accepted input must round-trip through the encoder.
        let encoded = synaptor::io::encode_tbars(&tbars);
        let again = synaptor::io::parse_tbars("fuzz", &encoded).expect("round trip");
        assert_eq!(tbars.len(), again.len());
    }
});
