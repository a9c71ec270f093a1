//! One generate → extract → score step, shared by every phase.

use crate::evaluator::Scorer;
use crate::gateway::{Gateway, GenerationRequest};
use crate::model::{Attempt, Problem};
use crate::prompt::extract_code;
use crate::Result;

/// Generates once and scores the extracted program. A response without code
/// becomes an attempt with empty code and score 0; the call is still spent.
pub(crate) fn generate_attempt(
    gateway: &Gateway,
    scorer: &dyn Scorer,
    request: GenerationRequest,
    problem: &Problem,
    attempt_id: String,
    parent: Option<String>,
) -> Result<Attempt> {
    let record = gateway.generate(request)?;
    let attempt = match extract_code(&record.response_text) {
        Ok(code) => {
            let outcome = scorer.score(&code, problem)?;
            Attempt::scored(attempt_id, code, outcome.verdicts)
        }
        Err(_) => Attempt::failed(attempt_id, ""),
    };
    Ok(attempt
        .with_parent(parent)
        .with_call_index(Some(record.call_index)))
}
