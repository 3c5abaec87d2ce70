#![no_main]

use libfuzzer_sys::fuzz_target;
use refer_marl::trainer::EpisodeMetrics;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(m) = EpisodeMetrics::from_line(line) {
        if let Ok(back) = EpisodeMetrics::from_line(&m.to_line()) {
            assert!(back.same_run_as(&m) || m.returns.iter().any(|x| x.is_nan()) || m.mean_return.is_nan());
        }
    }
});
