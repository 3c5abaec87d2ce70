#![no_main]

use libfuzzer_sys::fuzz_target;
use refer_marl::dist::{ActionSpace, Bounds};
use refer_marl::replay::ReplayDump;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let spaces = [
        ActionSpace::Discrete { n: 5 },
        ActionSpace::Continuous { bounds: vec![Bounds { lo: -1.0, hi: 1.0 }; 2] },
    ];
    for space in &spaces {
        if let Ok(m) = ReplayDump::from_json(text, space) {
            let held: usize = m.episodes().map(|(_, e)| e.len()).sum();
            assert_eq!(held, m.len());
            assert_eq!(m.far_count(), m.clone().recount_far());
        }
    }
});
