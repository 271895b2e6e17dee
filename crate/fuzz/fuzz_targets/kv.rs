#![no_main]
use exitrack_core::kv::KvMap;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = KvMap::parse(text) {
        assert_eq!(KvMap::parse(&m.to_text()).unwrap(), m);
        let _ = m.require("class_label");
        let _ = m.parsed::<f64>("phi");
    }
});
