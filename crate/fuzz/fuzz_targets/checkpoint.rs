#![no_main]
use exitrack_net::checkpoint::{fnv1a, Checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.is_empty() {
        return;
    }
    let (mode, body) = (data[0], &data[1..]);
    let decoded = if mode % 2 == 0 {
        Checkpoint::decode(body)
    } else {
        // append a valid hash so mutations reach the structural checks
        let mut v = body.to_vec();
        v.extend_from_slice(&fnv1a(body).to_le_bytes());
        Checkpoint::decode(&v)
    };
    if let Ok(ck) = decoded {
        assert_eq!(
            Checkpoint::decode(&ck.encode()).unwrap().classes,
            ck.classes
        );
    }
});
