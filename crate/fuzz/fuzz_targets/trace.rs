#![no_main]
use exitrack_core::ood::OodTrace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(t) = OodTrace::parse(text) {
        let back = OodTrace::parse(&t.to_text()).unwrap();
        assert_eq!(back.len(), t.len());
        assert_eq!(back.decisions, t.decisions);
    }
});
