use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::CodeArtifact;

const DISTRACTORS: usize = 3;

const KEYWORDS: &[&str] = &[
    "if", "else", "for", "in", "while", "function", "return", "TRUE", "FALSE", "NULL", "NA", "def", "import", "from",
    "as", "and", "or", "not", "None", "True", "False",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlankError {
    #[error("cannot blank an empty code line")]
    EmptyLine,
    #[error("code line `{0}` has no identifier to blank")]
    NothingToBlank(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlankedLine {
    /// The line with each blank shown as `____(n)`.
    pub display_line: String,
    /// Expected token per blank, in blank order.
    pub blanks: Vec<String>,
    /// Candidate tokens per blank, shuffled.
    pub options: Vec<Vec<String>>,
}

fn ident_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_.]*").expect("static regex"))
}

/// Distinct identifiers in order of first appearance, keywords excluded.
pub fn identifiers(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    ident_re()
        .find_iter(text)
        .map(|m| m.as_str().trim_end_matches('.').to_string())
        .filter(|id| !id.is_empty() && !KEYWORDS.contains(&id.as_str()))
        .filter(|id| seen.insert(id.clone()))
        .collect()
}

/// Code tokens named by an anchor: backticked or quoted spans, otherwise
/// snake_case words.
pub fn anchor_tokens(anchor: &str) -> Vec<String> {
    static QUOTED: OnceLock<Regex> = OnceLock::new();
    let quoted = QUOTED.get_or_init(|| Regex::new(r#"`([^`]+)`|'([^']+)'|"([^"]+)""#).expect("static regex"));
    let mut out: Vec<String> = quoted
        .captures_iter(anchor)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)).or_else(|| c.get(3)))
        .flat_map(|m| identifiers(m.as_str()))
        .collect();
    if out.is_empty() {
        out = identifiers(anchor).into_iter().filter(|w| w.contains('_')).collect();
    }
    out
}

fn first_call(line: &str) -> Option<String> {
    static CALL: OnceLock<Regex> = OnceLock::new();
    let re = CALL.get_or_init(|| Regex::new(r"([A-Za-z_][A-Za-z0-9_.]*)\s*\(").expect("static regex"));
    re.captures_iter(line)
        .map(|c| c[1].to_string())
        .find(|id| !KEYWORDS.contains(&id.as_str()))
}

fn fnv(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Blanks the anchor's tokens in `code_line`; with none present, the first
/// function call is blanked instead. Options mix the expected token with
/// distractors from `pool`, shuffled by `seed`.
pub fn blank_out(code_line: &str, anchor: &str, pool: &[String], seed: u64) -> Result<BlankedLine, BlankError> {
    if code_line.trim().is_empty() {
        return Err(BlankError::EmptyLine);
    }
    let wanted = anchor_tokens(anchor);
    let line_ids = identifiers(code_line);
    let mut targets: Vec<String> = line_ids.iter().filter(|id| wanted.contains(id)).cloned().collect();
    if targets.is_empty() {
        targets.extend(first_call(code_line));
    }
    if targets.is_empty() {
        return Err(BlankError::NothingToBlank(code_line.to_string()));
    }

    let mut display = String::new();
    let mut blanks: Vec<String> = Vec::new();
    let mut last = 0;
    for m in ident_re().find_iter(code_line) {
        let token = m.as_str();
        if targets.iter().any(|t| t == token) && !blanks.iter().any(|b| b == token) {
            display.push_str(&code_line[last..m.start()]);
            blanks.push(token.to_string());
            display.push_str(&format!("____({})", blanks.len()));
            last = m.end();
        }
    }
    display.push_str(&code_line[last..]);

    let options = blanks
        .iter()
        .enumerate()
        .map(|(i, expected)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv(code_line) ^ (i as u64));
            let candidates: Vec<&String> = pool
                .iter()
                .filter(|id| !blanks.contains(id) && *id != expected)
                .collect();
            let mut opts: Vec<String> = candidates
                .choose_multiple(&mut rng, DISTRACTORS)
                .map(|s| (*s).clone())
                .collect();
            opts.push(expected.clone());
            opts.sort();
            opts.shuffle(&mut rng);
            opts
        })
        .collect();

    Ok(BlankedLine {
        display_line: display,
        blanks,
        options,
    })
}

/// Distinct identifiers across all cells, the distractor pool.
pub fn identifier_pool(code: &CodeArtifact) -> Vec<String> {
    let mut seen = BTreeSet::new();
    code.cells
        .iter()
        .flat_map(|c| identifiers(&c.text))
        .filter(|id| seen.insert(id.clone()))
        .collect()
}

/// First code line mentioning one of the anchor's tokens, with its cell index.
pub fn find_code_line<'a>(code: &'a CodeArtifact, anchor: &str) -> Option<(usize, &'a str)> {
    let wanted = anchor_tokens(anchor);
    code.lines()
        .find(|(_, line)| identifiers(line).iter().any(|id| wanted.contains(id)))
}
