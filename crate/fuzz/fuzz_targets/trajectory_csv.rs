#![no_main]

use libfuzzer_sys::fuzz_target;
use resilient_consensus::simkit::{parse_records, write_records};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_records(data) {
        let mut out = Vec::new();
        write_records(&records, &mut out).expect("write to memory");
        let again = parse_records(out.as_slice()).expect("re-parse");
        assert_eq!(again.len(), records.len());
    }
});
