#![no_main]

use dype_core::PolicyKind;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(name) = std::str::from_utf8(data) {
        if let Ok(kind) = name.parse::<PolicyKind>() {
            assert_eq!(kind.name().parse::<PolicyKind>(), Ok(kind));
        }
    }
});
