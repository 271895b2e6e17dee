#![no_main]
use exitrack_core::kv::KvMap;
use exitrack_core::ood::{ExitDecider, PerturbConfig};
use exitrack_net::train::TrainConfig;
use exitrack_net::NetConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(m) = KvMap::parse(text) else { return };
    if let Ok(c) = NetConfig::from_kv(&m) {
        let mut out = KvMap::new();
        c.write_kv(&mut out);
        assert_eq!(NetConfig::from_kv(&out).unwrap(), c);
    }
    if let Ok(c) = TrainConfig::from_kv(&m) {
        let mut out = KvMap::new();
        c.write_kv(&mut out);
        assert_eq!(TrainConfig::from_kv(&out).unwrap(), c);
    }
    let _ = PerturbConfig::from_kv(&m);
    let _ = ExitDecider::from_kv(&m);
});
