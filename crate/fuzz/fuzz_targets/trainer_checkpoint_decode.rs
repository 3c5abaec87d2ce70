#![no_main]

use libfuzzer_sys::fuzz_target;
use refer_marl::trainer::TrainerCheckpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = TrainerCheckpoint::decode(data) {
        let bytes = TrainerCheckpoint::encode(&t);
        TrainerCheckpoint::decode(&bytes).expect("re-decode");
    }
});
