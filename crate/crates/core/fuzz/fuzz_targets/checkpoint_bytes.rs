#![no_main]

use libfuzzer_sys::fuzz_target;
use limbrec::autodiff::Checkpoint;
use limbrec::models::Model;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        assert_eq!(ck.to_bytes(), data);
        let _ = Model::from_checkpoint(ck);
    }
});
