#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use mdlm_lab::corpus::parse_external;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_external(text, Path::new("fuzz.jsonl"));
    }
});
