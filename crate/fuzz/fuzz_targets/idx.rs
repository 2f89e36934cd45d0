#![no_main]

use libfuzzer_sys::fuzz_target;
use nmsparse::nn::parse_idx;

fuzz_target!(|data: &[u8]| {
    let _ = parse_idx(data);
});
