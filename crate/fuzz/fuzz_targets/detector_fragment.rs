#![no_main]

use libfuzzer_sys::fuzz_target;
use resilient_consensus::detector::DetectorParams;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(p) = DetectorParams::from_fragment(text) {
        assert!(p.validate().is_ok());
        let again = DetectorParams::from_fragment(&p.to_fragment()).expect("re-parse");
        assert_eq!(again, p);
    }
});
