use serde::{Deserialize, Serialize};

use crate::dsl::Interaction;
use crate::gateway::{GatewayError, GenerationRequest, LlmGateway, Stage};
use crate::prompts;
use crate::student::Outcome;

/// What a pending question expects back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expected {
    Choice {
        answer: String,
        options: Vec<String>,
    },
    Blanks {
        tokens: Vec<String>,
        line: String,
    },
    Rubric {
        question: String,
        knowledge: String,
    },
    /// Graded by the next code-execution report.
    CodeRun,
    Ungraded,
}

impl Expected {
    pub fn interaction_default(interaction: Interaction) -> Self {
        match interaction {
            Interaction::ShowCode => Expected::CodeRun,
            _ => Expected::Ungraded,
        }
    }
}

/// A student's reply: free text, a chosen option, or blank fills.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blanks: Option<Vec<String>>,
}

impl Answer {
    pub fn display(&self) -> String {
        if let Some(c) = &self.choice {
            return c.clone();
        }
        if let Some(b) = &self.blanks {
            return b.join(", ");
        }
        self.text.clone().unwrap_or_default()
    }
}

fn option_index(value: &str, options: &[String]) -> Option<usize> {
    let v = value.trim();
    if let Some(i) = options.iter().position(|o| o.trim() == v) {
        return Some(i);
    }
    let letter = v.trim_end_matches([')', '.']);
    let mut chars = letter.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => {
            let i = (c.to_ascii_uppercase() as u8 - b'A') as usize;
            (i < options.len()).then_some(i)
        }
        _ => None,
    }
}

/// Exact option match; letters ("D") and option texts are interchangeable.
pub fn grade_choice(expected: &str, options: &[String], actual: &str) -> Outcome {
    let same = match (option_index(expected, options), option_index(actual, options)) {
        (Some(a), Some(b)) => a == b,
        _ => expected.trim() == actual.trim(),
    };
    if same {
        Outcome::Correct
    } else {
        Outcome::Incorrect
    }
}

/// Every blank must equal its token after trimming; case matters.
pub fn grade_blanks(expected: &[String], actual: &[String]) -> Outcome {
    let all = expected.len() == actual.len() && expected.iter().zip(actual).all(|(e, a)| e.trim() == a.trim());
    if all {
        Outcome::Correct
    } else {
        Outcome::Incorrect
    }
}

pub fn parse_rubric(reply: &str) -> Option<Outcome> {
    let word: String = reply
        .trim()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    match word.as_str() {
        "CORRECT" => Some(Outcome::Correct),
        "INCORRECT" => Some(Outcome::Incorrect),
        _ => None,
    }
}

/// Grades a reply. `None` means the interaction yields no observation.
pub fn grade(expected: &Expected, answer: &Answer, gateway: &dyn LlmGateway) -> Result<Option<Outcome>, GatewayError> {
    Ok(match expected {
        Expected::Choice { answer: right, options } => {
            let given = answer.choice.as_deref().or(answer.text.as_deref()).unwrap_or("");
            Some(grade_choice(right, options, given))
        }
        Expected::Blanks { tokens, .. } => {
            let given = answer.blanks.clone().unwrap_or_else(|| {
                answer
                    .text
                    .as_deref()
                    .unwrap_or("")
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .collect()
            });
            Some(grade_blanks(tokens, &given))
        }
        Expected::Rubric { question, knowledge } => {
            let text = answer.display();
            let request = GenerationRequest::new(
                Stage::Grading,
                prompts::GRADER_SYSTEM,
                prompts::rubric(question, knowledge, &text),
            );
            let reply = gateway.generate(&request)?;
            Some(parse_rubric(&reply).ok_or_else(|| GatewayError::Decode(format!("rubric reply `{reply}`")))?)
        }
        Expected::CodeRun | Expected::Ungraded => None,
    })
}
