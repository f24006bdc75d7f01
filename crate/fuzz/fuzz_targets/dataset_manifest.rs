#![no_main]

use libfuzzer_sys::fuzz_target;
use topoplan::worldgen::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = DatasetManifest::parse(text) {
        let _ = m.gen.validate();
        let _ = m.noise.validate();
    }
});
