#![no_main]

use libfuzzer_sys::fuzz_target;
use limbrec::dataset::parse_file_name;

fuzz_target!(|name: &str| {
    if let Ok(key) = parse_file_name(name) {
        assert_eq!(parse_file_name(&key.file_name()).as_ref(), Ok(&key));
    }
});
