#![no_main]

use libfuzzer_sys::fuzz_target;
use refer_marl::net::NetCheckpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = NetCheckpoint::decode(data) {
        assert_eq!(NetCheckpoint::decode(&c.encode()).expect("re-decode"), c);
    }
});
