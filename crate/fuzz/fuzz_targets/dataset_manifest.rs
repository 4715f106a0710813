#![no_main]

use dype_core::dataggen::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = DatasetManifest::parse(data);
});
