#![no_main]

use libfuzzer_sys::fuzz_target;
use topoplan::worldgen::GridFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(file) = GridFile::parse(text) else { return };
    if let Ok(grid) = file.to_grid() {
        let back = GridFile::from_grid(&grid);
        assert_eq!(GridFile::parse(&back.to_text()).unwrap().to_grid().unwrap(), grid);
    }
});
