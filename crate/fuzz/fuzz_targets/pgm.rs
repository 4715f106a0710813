#![no_main]

use dype_core::pgm::GrayImage;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = GrayImage::decode(data) {
        assert_eq!(img.data().len(), img.width() * img.height());
        assert_eq!(GrayImage::decode(&img.encode()).unwrap(), img);
    }
});
