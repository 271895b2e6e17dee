#![no_main]
use exitrack_core::dataset::{format_annotations, parse_annotations};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(boxes) = parse_annotations(text) {
        // whatever parses must survive a write/read cycle
        let again = parse_annotations(&format_annotations(boxes.iter().copied())).unwrap();
        assert_eq!(again, boxes);
    }
});
