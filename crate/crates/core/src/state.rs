//! Per-document pipeline state machine.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Route;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineState {
    Ingested,
    Classified,
    Split,
    Parsed,
    Extracted,
    Validated,
    Accepted,
    InReview,
    Fallback,
}

impl PipelineState {
    pub fn is_terminal(self) -> bool {
        matches!(self, PipelineState::Accepted | PipelineState::Fallback)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineState::Ingested => "ingested",
            PipelineState::Classified => "classified",
            PipelineState::Split => "split",
            PipelineState::Parsed => "parsed",
            PipelineState::Extracted => "extracted",
            PipelineState::Validated => "validated",
            PipelineState::Accepted => "accepted",
            PipelineState::InReview => "in_review",
            PipelineState::Fallback => "fallback",
        }
    }
}

impl fmt::Display for PipelineState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The kind of output a stage hands to the state machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutput {
    Classifier,
    Splitter,
    Parser,
    Extractor,
    Validator,
    Router(Route),
    /// Non-AI fallback from any non-terminal state.
    Fallback,
    /// Sends the document to a reviewer without a validation report, e.g.
    /// after an extraction failure or an ambiguous split.
    Escalation,
    /// Field-level re-extraction under a newer prompt version.
    Reextraction,
    /// Human correction on an open review.
    Correction,
    /// Human confirmation of an open review.
    Confirmation,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("state mismatch: a document in state {state} cannot take {output:?}")]
pub struct StateError {
    pub state: PipelineState,
    pub output: StageOutput,
}

/// Forward order ingested → classified → split → parsed → extracted →
/// validated → {accepted | in_review | fallback}, plus the review loop:
/// an open review may be re-extracted or re-validated and is closed by a
/// confirmation.
pub fn advance_state(
    state: PipelineState,
    output: StageOutput,
) -> Result<PipelineState, StateError> {
    use PipelineState as S;
    use StageOutput as O;
    let next = match (state, output) {
        (S::Ingested, O::Classifier) => S::Classified,
        (S::Classified, O::Splitter) => S::Split,
        (S::Split, O::Parser) => S::Parsed,
        (S::Parsed, O::Extractor) => S::Extracted,
        (S::Extracted, O::Validator) => S::Validated,
        (S::Validated, O::Router(Route::AutoAccept)) => S::Accepted,
        (S::Validated, O::Router(Route::HumanReview)) => S::InReview,
        (S::Validated, O::Router(Route::NonAiFallback)) => S::Fallback,
        (s, O::Fallback) if !s.is_terminal() => S::Fallback,
        (s, O::Escalation) if !s.is_terminal() && s != S::InReview => S::InReview,
        (S::Extracted | S::Validated | S::InReview, O::Reextraction) => S::Extracted,
        (S::InReview, O::Validator) => S::Validated,
        (S::InReview, O::Correction) => S::InReview,
        (S::InReview, O::Confirmation) => S::Accepted,
        _ => return Err(StateError { state, output }),
    };
    Ok(next)
}
