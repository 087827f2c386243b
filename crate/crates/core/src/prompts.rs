//! Prompt text for every gateway call. Mock scripts key on the phrases here,
//! so changing wording means updating the fixtures.

use crate::ingestion::{LearningGoalDef, TranscriptSentence};
use crate::knowledge::KnowledgeDomain;
use crate::planner::MentorMove;

pub const SEGMENT_SYSTEM: &str = "You segment programming video transcripts by learning goal.";
pub const KNOWLEDGE_SYSTEM: &str = "You summarize the knowledge taught in a programming video segment.";
pub const GRADER_SYSTEM: &str = "You grade a student's answer against a rubric.";

pub fn transcript_block(transcript: &[TranscriptSentence]) -> String {
    transcript
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn summarize(topic: &str, goals: &[&LearningGoalDef], transcript: &[TranscriptSentence]) -> String {
    let goal_lines = goals
        .iter()
        .map(|g| format!("- {}: {}", g.name, g.description))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "Here is a video transcript about {topic}. Summarize the video content that corresponds to each given learning goal.\n\
The transcript is not necessarily arranged in the order in which the learning goals are defined and can contain multiple segments with the same learning goal.\n\
The script may contain only some of the learning goals. Please do not include summary of learning goals that do not exist in the transcript.\n\
Increase the granularity. For example, if the video author creates two different visualizations, they should be summarized into two points.\n\n\
Learning goals:\n{goal_lines}\n\n\
Response only in a list in the order of their appearance in the video without any explanations, for example:\n\
[\n    (\"Introduction\", summary),\n    (\"Visualize the data\", summary),\n    ...\n]\n\n\
Transcript:\n{}",
        transcript_block(transcript)
    )
}

pub fn retrieve(summaries: &[(String, String)], transcript: &[TranscriptSentence]) -> String {
    let items = summaries
        .iter()
        .enumerate()
        .map(|(i, (goal, summary))| format!("{}. ({goal}) {summary}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "Retrieve the transcript sentences for each summary point below. For every point, quote verbatim the first and the last transcript sentence of the part of the video it summarizes.\n\n\
Summary points:\n{items}\n\n\
Respond only with a JSON array with one object per summary point, in the same order, for example:\n\
[{{\"category\": \"Visualize the data\", \"sentences\": [\"first sentence\", \"last sentence\"]}}]\n\n\
Transcript:\n{}",
        transcript_block(transcript)
    )
}

pub fn knowledge_summarize(
    video_type: &str,
    goal: &str,
    domain: KnowledgeDomain,
    max_items: usize,
    segment_text: &str,
    code: &str,
) -> String {
    let structure = match domain {
        KnowledgeDomain::ConceptRelated => format!(
            "The result should be summarized in one sentence of procedural knowledge and no more than {} sentences of declarative knowledge in the order in which it should be learned.\n\n\
Each piece of knowledge should follow this format:\n\n\
Procedural knowledge: \"To achieve/understand + [specific goal/outcome] + one need to + [general actions/processes] + [additional details] + and consider/use + [relevant factors/tools].\" The [general actions/processes] should be quoted in a pair of & sign.\n\n\
Declarative knowledge: \"[Subject] + [verb phrase] + that + [independent clause]\".",
            max_items.saturating_sub(1)
        ),
        KnowledgeDomain::ProgrammingRelated => format!(
            "The result should be summarized in one sentence of declarative knowledge and no more than {} sentences of procedural knowledge in the order in which it should be learned.\n\n\
Each piece of knowledge should follow this format:\n\n\
Declarative knowledge: \"The task is + [final goal] + using + [general method/tool] + and + [additional method/technique].\"\n\n\
Procedural knowledge: \"To achieve + [specific goal] + one must + [action/verb] [specific tool/method] + on + [object/target] + because + [reason/purpose].\"",
            max_items.saturating_sub(1)
        ),
    };
    let code_block = if code.trim().is_empty() {
        String::new()
    } else {
        format!("\n\nCode used in this segment:\n{code}")
    };
    format!(
        "The following {video_type} video transcript is about a learning goal: {goal}. Summarize the declarative and procedural knowledge in the video transcript.\n\n\
{structure}\n\
Prefix every item with \"Declarative knowledge:\" or \"Procedural knowledge:\".\n\
And sort the output knowledge order according to the correct cognitive order.\n\n\
Your response should be in a list format without any explanations:\n[\n    'knowledge_1',\n    'knowledge_2',\n    ...\n]\n\n\
Transcript:\n{segment_text}{code_block}"
    )
}

pub fn conversation_system(topic: &str, video_type: &str, kernel: &str) -> String {
    format!(
        "You are an expert in {topic}, specializing in {video_type}. Your task is to use the Cognitive Apprenticeship approach to assist a student in learning {video_type} through a video tutorial.\n\n\
You will be provided with one or more of the following inputs:\n\
- knowledge: the knowledge that will be learned by the student\n\
- pedagogy: the specific cognitive apprenticeship move you must follow to guide students.\n\
- student's code or question or choice: the student's current performance.\n\
- other parameters or requirements: additional information or requirements you must follow to guide the student.\n\n\
Notes for Response:\n\
- Don't answer or say anything irrelevant to the topic ({video_type}) or the programming language ({kernel}).\n\
- Use natural language to communicate in the first person as a teaching assistant.\n\
- You must strictly follow the pedagogy to provide guidance.\n\
- Tailor your advice to the programming language the student uses: {kernel}.\n\
- Don't tell the student your response is based on the transcript or code."
    )
}

pub fn mentor_message(knowledge: &str, method: MentorMove, action: &str, prompt: &str, extra: &str) -> String {
    let mut out = format!("knowledge: {knowledge}\npedagogy: {method}: {action}\nrequirements: {prompt}");
    if !extra.is_empty() {
        out.push('\n');
        out.push_str(extra);
    }
    out
}

pub const MCQ_FORMAT: &str = "Respond only with JSON of the form {\"question\": \"...\", \"options\": [\"...\", \"...\", \"...\", \"...\"], \"answer\": \"<the correct option, verbatim>\"}.";

pub fn rubric(question: &str, knowledge: &str, answer: &str) -> String {
    format!(
        "Decide whether the student's explanation shows understanding of the knowledge. Reply with exactly CORRECT or INCORRECT.\n\n\
knowledge: {knowledge}\nquestion: {question}\nstudent answer: {answer}"
    )
}

pub fn corrective(stderr: &str, code: &str, knowledge: &str) -> String {
    format!(
        "pedagogy: Coaching: the student's code failed to run. Explain the error briefly and suggest an improvement without giving the full solution.\n\
knowledge: {knowledge}\nerror: {stderr}\nstudent code:\n{code}"
    )
}

pub fn help(question: &str, knowledge: &str) -> String {
    format!(
        "pedagogy: Coaching: the student asks a question. Answer it briefly and relate it to the current knowledge.\n\
knowledge: {knowledge}\nstudent question: {question}"
    )
}

pub fn explore(question: &str) -> String {
    format!(
        "pedagogy: Exploration: the guided session is over. Discuss the student's question freely, going beyond the video when useful.\n\
student question: {question}"
    )
}
