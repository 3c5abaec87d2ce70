#![no_main]

use libfuzzer_sys::fuzz_target;
use refer_marl::envs::EnvSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = text.parse::<EnvSpec>() {
        let again: EnvSpec = spec.to_string().parse().expect("printed spec parses");
        assert_eq!(again, spec);
        let env = spec.build();
        assert_eq!(env.n_agents(), spec.n_agents);
    }
});
