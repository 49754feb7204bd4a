#![no_main]

use libfuzzer_sys::fuzz_target;
use mdlm_lab::denoiser::remote::{decode_response, DenoiseRequest};

fuzz_target!(|data: &[u8]| {
    let req = DenoiseRequest {
        tokens: vec![1, 5, 1, 7],
        masked: vec![true, false, true, false],
        top_k: 2,
    };
    let _ = decode_response(&req, data, 149);
});
