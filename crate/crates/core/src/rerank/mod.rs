//! Context-aware re-ranking heads over pair embeddings.
//!
//! Every head ends in the same two-way FFNN + softmax; they differ in what
//! they feed it:
//!
//! * `linear`: the candidate embedding alone.
//! * `gru` / `lstm`: the recurrent output after stepping the candidate from
//!   the conversation's hidden state.
//! * `bigru` / `bilstm`: forward and backward outputs at the candidate's
//!   position of the sequence (previous top-1 embeddings, candidate).
//! * `memnet`: candidate plus an attention-weighted sum of the previous
//!   turns' top-1 embeddings (single hop, unscaled dot-product attention).

mod cell;
mod grad;
mod head;
pub(crate) mod math;
mod params;

pub use cell::{CellKind, RnnState};
pub use grad::{
    conversation_gradient, conversation_loss, turn_loss, ConversationGradient, TrainingTurn,
};
pub(crate) use head::advance;
pub use head::{
    linear_forward, memnet_score, recompute_hidden, rerank_turn, rnn_score, rnn_step,
    score_candidate, ConversationState, RerankOutcome, TurnScore,
};
pub use params::{HeadKind, HeadParams};
