#![no_main]

use libfuzzer_sys::fuzz_target;
use mdlm_lab::denoiser::toy::{parse_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = parse_checkpoint(data) {
        let again =
            parse_checkpoint(&write_checkpoint(&model)).expect("written checkpoint reparses");
        assert_eq!(again, model);
    }
});
