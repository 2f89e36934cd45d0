#![no_main]

use libfuzzer_sys::fuzz_target;
use nmsparse::format::{decompress, CompressedNM};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = CompressedNM::decode(data) {
        // accepted input is canonical and expands without panicking
        assert_eq!(c.encode(), data);
        let _ = decompress(&c);
    }
});
