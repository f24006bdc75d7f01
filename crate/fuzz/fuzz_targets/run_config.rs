#![no_main]

use libfuzzer_sys::fuzz_target;
use topoplan_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml(text) {
        if let Ok(cfg) = cfg.resolved() {
            let _ = cfg.hash();
        }
    }
});
