#![no_main]

use libfuzzer_sys::fuzz_target;
use nmsparse::io::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::decode(data) {
        let _ = c.into_trainer();
    }
});
