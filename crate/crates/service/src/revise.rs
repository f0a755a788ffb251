//! Model-backed revision of flagged trajectories.

use trajkit::judge::prompts::render_transcript;
use trajkit::model::{Message, Role, Trajectory};
use trajkit::rollout::{ChatModel, Sampling};

use crate::error::{ServiceError, ServiceResult};

pub const REVISION_SYSTEM_PROMPT: &str = "You revise tool-calling trajectories for a financial assistant. \
You are given a trajectory and reviewer feedback. Write a corrected final answer that addresses the feedback \
using only the information in the tool responses.";

pub fn revision_prompt(original: &Trajectory, feedback: &str) -> String {
    format!(
        "## Trajectory\n{}\n## Reviewer feedback\n{}\n\nWrite the corrected final answer.",
        render_transcript(original),
        feedback
    )
}

/// Keeps the original tool interaction and replaces the final answer with
/// the model's revision.
pub fn revise_trajectory(model: &dyn ChatModel, original: &Trajectory, feedback: &str) -> ServiceResult<Trajectory> {
    let request = [Message::system(REVISION_SYSTEM_PROMPT), Message::user(revision_prompt(original, feedback))];
    let sampling = Sampling {
        temperature: 0.0,
        top_p: 1.0,
    };
    let reply = model.respond(&request, &[], &sampling)?;
    if reply.role != Role::Assistant || reply.content.trim().is_empty() {
        return Err(ServiceError::Unavailable("revision model returned no answer".into()));
    }
    let mut messages = original.messages.clone();
    if messages.last().is_some_and(|m| m.role == Role::Assistant && !m.has_tool_calls()) {
        messages.pop();
    }
    messages.push(Message::assistant(reply.content));
    let mut revised = Trajectory::new(original.query_id.clone(), format!("{}+revision", original.source_model), messages);
    revised.failed = false;
    Ok(revised)
}

#[cfg(test)]
mod tests {
    use super::*;
    use trajkit::model::ToolSpec;
    use trajkit::rollout::FnModel;

    #[test]
    fn replaces_final_answer() {
        let original = Trajectory::new("q", "m", vec![Message::user("q"), Message::assistant("wrong")]);
        let model = FnModel::new("rev", |msgs: &[Message], _: &[ToolSpec]| {
            assert!(msgs[1].content.contains("use MSFT"));
            Ok(Message::assistant("right"))
        });
        let r = revise_trajectory(&model, &original, "use MSFT").unwrap();
        assert_eq!(r.final_answer(), "right");
        assert_eq!(r.messages.len(), 2);
        assert_eq!(r.source_model, "m+revision");
    }
}
