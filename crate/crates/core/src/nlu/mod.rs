//! Intent classification in a shared embedding space, keyword salience and
//! the full text → [`ParseResult`] pipeline.

mod parse;
mod ranker;

pub use parse::{extract_salient_keywords, parse, IntentScore, Keyword, NluPipeline, ParseResult, NLU_FALLBACK};
pub(crate) use ranker::stream_rng;
pub use ranker::{
    example_gradients, example_loss, margin_loss, predict_intent, train_ranker, Hyperparams, ModelFileError,
    RankerGradients, RankerParams, RankerTraining, TrainError, RANKER_FORMAT_VERSION,
};
