#![no_main]

use libfuzzer_sys::fuzz_target;
use nmsparse::nn::Dataset;

fuzz_target!(|data: &[u8]| {
    let _ = Dataset::from_csv(data, "label");
});
