#![no_main]

use libfuzzer_sys::fuzz_target;
use topoplan::graph::{validate_graph, GraphRecord};

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    let Ok(record) = GraphRecord::parse_line(line) else { return };
    if let Ok(g) = record.to_graph() {
        // Anything that decodes must be a well-formed graph that re-encodes.
        assert!(validate_graph(&g).is_empty());
        let again = GraphRecord::from_graph(&g, record.env_seed, record.grid_ref.clone());
        assert!(GraphRecord::parse_line(&again.to_line()).is_ok());
    }
});
