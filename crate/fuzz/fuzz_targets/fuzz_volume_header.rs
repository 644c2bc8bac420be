#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = synaptor::io::parse_volume_header("fuzz", data);
});
