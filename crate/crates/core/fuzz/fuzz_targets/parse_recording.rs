#![no_main]

use libfuzzer_sys::fuzz_target;
use limbrec::dataset::parse_recording;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rec) = parse_recording(text) {
            let _ = rec.sample_rate_hz();
            let names = rec.channels.clone();
            let _ = rec.select(&names);
        }
    }
});
