#![no_main]

use libfuzzer_sys::fuzz_target;
use mdlm_lab::vocab::Vocabulary;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(v) = Vocabulary::parse_file(text) {
            let again = Vocabulary::parse_file(&v.to_file_string())
                .expect("serialized vocabulary reparses");
            assert_eq!(again.digest(), v.digest());
        }
    }
});
