#![no_main]

use fmrme_core::io::rmap::{decode_rmap, encode_rmap};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((header, sample)) = decode_rmap(data) {
        assert_eq!(sample.phi.len(), header.shape.len());
        // Re-encoding a decoded file reproduces it byte for byte.
        assert_eq!(encode_rmap(&sample, header.stats), data);
    }
});
