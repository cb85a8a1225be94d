//! Conversation state, state featurization and the recurrent action policy.

mod features;
mod policy;
mod tracker;

pub use features::{
    featurize_state, history_rows, memory_windows, state_width, window, HistoryRow, MemoryBank, StateFeatures,
};
pub use policy::{
    argmax, policy_example_gradients, policy_example_loss, select_action, target_counts, train_policy, unroll_story,
    ActionChoice, ActionScore, Attention, Net, PolicyConfig, PolicyParams, PolicyPrediction, PolicyTraining,
    UnrolledStory, POLICY_FORMAT_VERSION,
};
pub use tracker::{DialogueTracker, Event, EventKind, TrackerError};
