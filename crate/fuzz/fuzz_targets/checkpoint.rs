#![no_main]

use libfuzzer_sys::fuzz_target;
use topoplan::autodiff::Checkpoint;
use topoplan::planner::NeuralPlannerParams;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(ck) = Checkpoint::parse(text) else { return };
    if let Ok(p) = NeuralPlannerParams::from_checkpoint(&ck) {
        assert!(p.all_finite());
        let again = p.to_checkpoint(ck.rng_seed, ck.epoch);
        assert_eq!(NeuralPlannerParams::from_checkpoint(&again).unwrap(), p);
    }
});
