#![no_main]

use libfuzzer_sys::fuzz_target;
use nmsparse::io::WeightArchive;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = WeightArchive::decode(data) {
        assert_eq!(a.encode(), data);
    }
});
