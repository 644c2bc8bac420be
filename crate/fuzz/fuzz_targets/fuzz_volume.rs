#![no_main]

use libfuzzer_sys::fuzz_target;
use synaptor::io::{decode_gray, decode_labels, decode_scalar, parse_volume_header, Dtype};

// Input layout: header JSON, a NUL separator, then the raw payload.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else {
        return;
    };
    let (header_bytes, raw) = (&data[..split], &data[split + 1..]);
    let Ok(header) = parse_volume_header("fuzz", header_bytes) else {
        return;
    };
    match header.dtype {
        Dtype::U8 => {
            let _ = decode_gray("fuzz", &header, raw);
        }
        Dtype::U32 => {
            let _ = decode_labels("fuzz", &header, raw);
        }
        Dtype::F32 => {
            let _ = decode_scalar("fuzz", &header, raw);
        }
    }
});
