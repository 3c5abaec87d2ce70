#![no_main]

use libfuzzer_sys::fuzz_target;
use refer_marl::trainer::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = Config::parse(text) {
        // Whatever parses must print back to an equal config.
        let again = Config::parse(&cfg.to_text()).expect("printed config parses");
        assert_eq!(again.to_text(), cfg.to_text());
    }
});
