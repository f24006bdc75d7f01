//! Recurrent graph planner: gated messages, serialized GRU accumulation,
//! MLP state update and a softmax next-hop head, plus supervised training.

mod gradcheck;
mod model;
mod params;
#[cfg(test)]
mod reference;
mod train;

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport, GradcheckResult};
pub use model::{
    accumulate, forward, forward_meanpool_ablation, forward_on_tape, message, next_hop_table, predict_next,
    ActionMatrix, ForwardOptions, ForwardPass, NeighborOrder, PlannerInput, PredictMode,
};
pub use params::{Aggregator, ModelDims, NeuralPlannerParams};
pub use train::{
    build_examples, evaluate_planner, moddrop_mask, moddrop_probability, train, ChannelSchedule, CurveRow,
    EvalSummary, TrainConfig, TrainOutcome, TrainingExample,
};
