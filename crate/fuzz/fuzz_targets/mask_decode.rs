#![no_main]

use fmrme_core::io::mask::{decode_mask, encode_mask};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = decode_mask(data) {
        assert_eq!(mask.visible.len() + mask.masked.len(), mask.shape.len());
        assert_eq!(encode_mask(&mask), data);
    }
});
