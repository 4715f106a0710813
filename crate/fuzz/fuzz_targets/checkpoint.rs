#![no_main]

use dype_core::tinydit::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        let again = Checkpoint::decode(&ck.encode()).expect("re-encoded checkpoint must decode");
        assert_eq!(again.model(), ck.model());
    }
});
