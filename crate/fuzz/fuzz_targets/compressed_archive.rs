#![no_main]

use libfuzzer_sys::fuzz_target;
use nmsparse::io::CompressedArchive;

fuzz_target!(|data: &[u8]| {
    let _ = CompressedArchive::decode(data);
});
