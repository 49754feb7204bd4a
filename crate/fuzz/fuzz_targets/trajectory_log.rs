#![no_main]

use libfuzzer_sys::fuzz_target;
use mdlm_lab::decoder::Trajectory;
use mdlm_lab::vocab::Vocabulary;

fuzz_target!(|data: &[u8]| {
    let vocab = Vocabulary::standard();
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((header, traj)) = Trajectory::parse_log(text, &vocab) {
            let _ = mdlm_lab::analysis::check_trajectory(&traj);
            let again = Trajectory::parse_log(
                &traj.to_log(&vocab, &header.config_hash, header.seed),
                &vocab,
            )
            .expect("rendered log reparses");
            assert_eq!(again.1, traj);
        }
    }
});
