#![no_main]
use exitrack_core::kv::KvMap;
use exitrack_core::synthetic::{generate, SceneSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(m) = KvMap::parse(text) else { return };
    let Ok(spec) = SceneSpec::from_kv(&m) else {
        return;
    };
    let (w, h) = spec.frame_size;
    // render only scenes small enough to keep iterations fast
    if w.saturating_mul(h).saturating_mul(spec.n_frames) <= 1 << 16 {
        if let Ok(seq) = generate(&spec) {
            assert_eq!(seq.len(), spec.n_frames);
        }
    }
});
