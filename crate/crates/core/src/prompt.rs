//! Guess and repair prompt construction, score rendering and code extraction.
//!
//! Prompts are pure functions of their inputs: identical inputs give
//! byte-identical prompts, which keeps gateway cache keys stable.

use serde::{Deserialize, Serialize};

use crate::model::{Attempt, CandidatePair, Problem};

/// Version of the fixed text blocks below. Bump whenever any of them changes.
pub const TEMPLATE_VERSION: &str = "repair-prompts/1";

pub const ENTRY_POINT_STUB: &str = "def solve(s: str):\n  ...";
pub const ENTRY_POINT_PREFIX: &str = "def solve";

const GUESS_INSTRUCTION: &str = "Complete the function definition below. Print the final answer in the function. Do not write main. Do not write anything outside the solve() function.";

const REPAIR_HEADER: &str = "You are an experienced software developer.\n\
Look at the question (Q) and solutions below (A).";

const OBJECTIVE: &str = "The main objective is to improve the solve() function to answer the question.";

pub const EXAMPLE_SEPARATOR: &str = "=======================================";

const FEEDBACK_HEADER: &str = "You are an experienced software developer.\n\
Look at the question (Q) and the solution below (A).\n\
The solution does not pass all of its test cases. Explain why the code fails and what has to change. Do not write any code.";

const FENCE_LANG: &str = "python";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    /// Problems, guesses and fixes only.
    Naive,
    /// Adds the header instruction.
    Instruction,
    /// Adds the header instruction and the test scores of every guess and fix.
    #[default]
    InstructionAndScore,
}

impl PromptStyle {
    fn has_instruction(self) -> bool {
        !matches!(self, PromptStyle::Naive)
    }

    fn has_scores(self) -> bool {
        matches!(self, PromptStyle::InstructionAndScore)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("a repair prompt needs at least one in-context pair")]
    NoInContextPairs,
    #[error("no code found in response")]
    NoCode,
}

/// Renders a fraction as an integer percent, rounding half up.
pub fn render_score(fraction: f64) -> i64 {
    (fraction * 100.0 + 0.5).floor() as i64
}

fn fenced(code: &str) -> String {
    format!("```{FENCE_LANG}\n{code}\n```")
}

pub fn build_guess_prompt(problem: &Problem) -> String {
    format!(
        "{}\n\n{}\n\n{}\n",
        problem.description,
        GUESS_INSTRUCTION,
        fenced(ENTRY_POINT_STUB)
    )
}

#[derive(Debug, Clone)]
pub struct RepairPromptSpec<'a> {
    pub in_context_pairs: Vec<(&'a CandidatePair, &'a Problem)>,
    pub target_problem: &'a Problem,
    pub target_guess: &'a Attempt,
    pub style: PromptStyle,
    /// Desired score announced for the target fix, in percent.
    pub target_fix_score_rendered: i64,
}

impl<'a> RepairPromptSpec<'a> {
    pub fn new(
        in_context_pairs: Vec<(&'a CandidatePair, &'a Problem)>,
        target_problem: &'a Problem,
        target_guess: &'a Attempt,
        style: PromptStyle,
    ) -> Self {
        RepairPromptSpec {
            in_context_pairs,
            target_problem,
            target_guess,
            style,
            target_fix_score_rendered: 100,
        }
    }
}

fn push_example(out: &mut String, n: usize, pair: &CandidatePair, problem: &Problem, style: PromptStyle) {
    out.push_str(&format!("Example {n}:\n\n(Q): {}\n\n", problem.description));
    out.push_str("Bad solution code A(bad):\n\n");
    out.push_str(&fenced(&pair.guess.code));
    out.push_str("\n\n");
    if style.has_scores() {
        out.push_str(&format!(
            "The score of this code is score(A(bad)) = {}.\n\n",
            render_score(pair.guess.score)
        ));
    }
    out.push_str("Good solution code A(good):\n\n");
    if style.has_scores() {
        out.push_str(&format!(
            "The score of this code is score(A(good)) = {}.\n\n",
            render_score(pair.fix.score)
        ));
    }
    out.push_str(&fenced(&pair.fix.code));
    out.push_str("\n\n");
}

fn push_target(out: &mut String, problem: &Problem, guess: &Attempt, style: PromptStyle, fix_score: i64) {
    if style.has_instruction() {
        out.push_str(OBJECTIVE);
        out.push_str("\n\n");
    }
    out.push_str(&format!("(Q): {}\n\n", problem.description));
    out.push_str("Bad solution code A(bad):\n\n");
    out.push_str(&fenced(&guess.code));
    out.push_str("\n\n");
    if style.has_scores() {
        out.push_str(&format!(
            "The score of this solution is score(A(bad)) = {}\n\n",
            render_score(guess.score)
        ));
    }
    out.push_str("Good solution code A(good):\n");
    if style.has_scores() {
        out.push_str(&format!(
            "\nThe score of this solution is score(A(good)) = {fix_score}\n"
        ));
    }
}

fn push_header(out: &mut String, style: PromptStyle) {
    if style.has_instruction() {
        out.push_str(REPAIR_HEADER);
        out.push_str("\n\n");
        out.push_str(OBJECTIVE);
        out.push_str("\n\n");
    }
}

/// k-shot repair prompt: header, each in-context pair in order, then the target.
pub fn build_repair_prompt(spec: &RepairPromptSpec<'_>) -> Result<String, PromptError> {
    if spec.in_context_pairs.is_empty() {
        return Err(PromptError::NoInContextPairs);
    }
    let mut out = String::new();
    push_header(&mut out, spec.style);
    for (i, (pair, problem)) in spec.in_context_pairs.iter().enumerate() {
        push_example(&mut out, i + 1, pair, problem, spec.style);
    }
    out.push_str(EXAMPLE_SEPARATOR);
    out.push_str("\n\n");
    push_target(
        &mut out,
        spec.target_problem,
        spec.target_guess,
        spec.style,
        spec.target_fix_score_rendered,
    );
    Ok(out)
}

/// Repair prompt without in-context examples: header and target only.
pub fn build_zero_shot_repair_prompt(problem: &Problem, guess: &Attempt, style: PromptStyle) -> String {
    let mut out = String::new();
    push_header(&mut out, style);
    push_target(&mut out, problem, guess, style, 100);
    out
}

/// Asks for a verbal diagnosis of a failing solution (self-repair baseline).
pub fn build_feedback_prompt(problem: &Problem, guess: &Attempt) -> String {
    format!(
        "{FEEDBACK_HEADER}\n\n(Q): {}\n\nSolution code A:\n\n{}\n\nThe score of this solution is score(A) = {}\n\nFeedback:\n",
        problem.description,
        fenced(&guess.code),
        render_score(guess.score)
    )
}

/// Repair prompt conditioned on one piece of verbal feedback.
pub fn build_feedback_repair_prompt(problem: &Problem, guess: &Attempt, feedback: &str) -> String {
    format!(
        "{REPAIR_HEADER}\n\n{OBJECTIVE}\n\n(Q): {}\n\nBad solution code A(bad):\n\n{}\n\nThe score of this solution is score(A(bad)) = {}\n\nFeedback on A(bad):\n\n{}\n\nGood solution code A(good):\n\nThe score of this solution is score(A(good)) = 100\n",
        problem.description,
        fenced(&guess.code),
        render_score(guess.score),
        feedback.trim_end()
    )
}

/// A fenced block located in some text. Offsets are byte positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock<'a> {
    /// The whole block including both fence lines.
    pub full: &'a str,
    pub body: &'a str,
}

/// All fenced blocks, in order. An unterminated final fence runs to the end.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock<'_>> {
    let mut blocks = Vec::new();
    let mut open: Option<(usize, usize)> = None; // (fence line start, body start)
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let start = pos;
        pos += line.len();
        let content = line.trim_end_matches(['\n', '\r']);
        let trimmed = content.trim_start();
        match open {
            None if trimmed.starts_with("```") => open = Some((start, pos)),
            Some((fence_start, body_start)) if trimmed.trim_end() == "```" => {
                let body_end = if start > body_start {
                    let mut e = start - 1; // newline before the closing fence
                    if e > body_start && text.as_bytes()[e - 1] == b'\r' {
                        e -= 1;
                    }
                    e
                } else {
                    body_start
                };
                blocks.push(FencedBlock {
                    full: text[fence_start..start + content.len()].as_ref(),
                    body: &text[body_start..body_end],
                });
                open = None;
            }
            _ => {}
        }
    }
    if let Some((fence_start, body_start)) = open {
        let body_start = body_start.min(text.len());
        blocks.push(FencedBlock {
            full: &text[fence_start..],
            body: text[body_start..].trim_end_matches('\n'),
        });
    }
    blocks
}

/// Pulls the candidate program out of a model response: the last fenced
/// block, or failing that, everything from the first line that starts the
/// entry-point definition.
pub fn extract_code(response: &str) -> Result<String, PromptError> {
    let code = match fenced_blocks(response).last() {
        Some(block) => block.body.to_string(),
        None => {
            let mut pos = 0;
            let mut found = None;
            for line in response.split_inclusive('\n') {
                if line.starts_with(ENTRY_POINT_PREFIX) {
                    found = Some(pos);
                    break;
                }
                pos += line.len();
            }
            match found {
                Some(p) => response[p..].to_string(),
                None => return Err(PromptError::NoCode),
            }
        }
    };
    if code.trim().is_empty() {
        return Err(PromptError::NoCode);
    }
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TestCase, Verdict};
    use proptest::prelude::*;

    fn problem(id: &str, desc: &str) -> Problem {
        Problem {
            id: id.into(),
            description: desc.into(),
            difficulty: None,
            categories: vec![],
            source: "t".into(),
            tests: vec![TestCase {
                input: "1".into(),
                expected_output: "1".into(),
            }],
        }
    }

    fn attempt(code: &str, pass: usize, total: usize) -> Attempt {
        let v = (0..total)
            .map(|i| if i < pass { Verdict::Pass } else { Verdict::WrongOutput })
            .collect();
        Attempt::scored(code, code, v)
    }

    #[test]
    fn guess_prompt_layout() {
        let p = problem("a", "Add two numbers.");
        let prompt = build_guess_prompt(&p);
        assert!(prompt.starts_with("Add two numbers.\n\n"));
        assert!(prompt.contains(
            "Add two numbers.\n\nComplete the function definition below. Print the final answer in the function. Do not write main. Do not write anything outside the solve() function."
        ));
        assert!(prompt.contains("```python\ndef solve(s: str):\n  ...\n```"));
        assert_eq!(prompt, build_guess_prompt(&p));
    }

    #[test]
    fn delimiter_in_description_is_positional() {
        let p = problem("a", "Print ``` and =======================================.");
        let prompt = build_guess_prompt(&p);
        assert!(prompt.starts_with(&p.description));
        assert!(prompt.ends_with("```python\ndef solve(s: str):\n  ...\n```\n"));
    }

    #[test]
    fn repair_prompt_with_scores() {
        let src = problem("src", "Source question.");
        let tgt = problem("tgt", "Target question.");
        let pair = CandidatePair::new("src", attempt("bad()", 1, 4), attempt("good()", 3, 4), 0).unwrap();
        let guess = attempt("guess()", 1, 2);
        let spec = RepairPromptSpec::new(vec![(&pair, &src)], &tgt, &guess, PromptStyle::InstructionAndScore);
        let prompt = build_repair_prompt(&spec).unwrap();
        assert!(prompt.starts_with("You are an experienced software developer."));
        assert!(prompt.contains("score(A(bad)) = 25"));
        assert!(prompt.contains("score(A(good)) = 75"));
        assert!(prompt.contains("score(A(bad)) = 50"));
        assert!(prompt.trim_end().ends_with("score(A(good)) = 100"));
        assert!(prompt.contains(EXAMPLE_SEPARATOR));
        let q_src = prompt.find("Source question.").unwrap();
        let q_tgt = prompt.find("Target question.").unwrap();
        assert!(q_src < q_tgt);
    }

    #[test]
    fn naive_style_has_no_instruction_or_scores() {
        let src = problem("src", "S");
        let tgt = problem("tgt", "T");
        let pair = CandidatePair::new("src", attempt("a", 0, 1), attempt("b", 1, 1), 0).unwrap();
        let guess = attempt("g", 0, 1);
        let spec = RepairPromptSpec::new(vec![(&pair, &src)], &tgt, &guess, PromptStyle::Naive);
        let prompt = build_repair_prompt(&spec).unwrap();
        assert!(!prompt.contains("experienced software developer"));
        assert!(!prompt.contains("main objective"));
        assert!(!prompt.contains("score("));

        let spec = RepairPromptSpec::new(vec![(&pair, &src)], &tgt, &guess, PromptStyle::Instruction);
        let prompt = build_repair_prompt(&spec).unwrap();
        assert!(prompt.contains("experienced software developer"));
        assert!(!prompt.contains("score("));
    }

    #[test]
    fn pairs_appear_once_in_order() {
        let p1 = problem("p1", "First problem text.");
        let p2 = problem("p2", "Second problem text.");
        let tgt = problem("t", "Target.");
        let a = CandidatePair::new("p1", attempt("g1", 0, 1), attempt("f1", 1, 1), 0).unwrap();
        let b = CandidatePair::new("p2", attempt("g2", 0, 1), attempt("f2", 1, 1), 1).unwrap();
        let guess = attempt("g", 0, 1);
        let spec = RepairPromptSpec::new(vec![(&a, &p1), (&b, &p2)], &tgt, &guess, PromptStyle::default());
        let prompt = build_repair_prompt(&spec).unwrap();
        assert_eq!(prompt.matches("First problem text.").count(), 1);
        assert_eq!(prompt.matches("Second problem text.").count(), 1);
        assert!(prompt.find("Example 1:").unwrap() < prompt.find("First problem text.").unwrap());
        assert!(prompt.find("First problem text.").unwrap() < prompt.find("Example 2:").unwrap());
        assert!(prompt.find("Second problem text.").unwrap() < prompt.find("Target.").unwrap());
    }

    #[test]
    fn empty_pairs_rejected() {
        let tgt = problem("t", "T");
        let guess = attempt("g", 0, 1);
        let spec = RepairPromptSpec::new(vec![], &tgt, &guess, PromptStyle::default());
        assert_eq!(build_repair_prompt(&spec), Err(PromptError::NoInContextPairs));
    }

    #[test]
    fn zero_shot_prompt_has_target_only() {
        let tgt = problem("t", "Target.");
        let guess = attempt("g()", 1, 3);
        let prompt = build_zero_shot_repair_prompt(&tgt, &guess, PromptStyle::default());
        assert!(!prompt.contains("Example"));
        assert!(!prompt.contains(EXAMPLE_SEPARATOR));
        assert!(prompt.contains("score(A(bad)) = 33"));
        assert_eq!(fenced_blocks(&prompt).last().unwrap().body, "g()");
    }

    #[test]
    fn score_rendering_rounds_half_up() {
        assert_eq!(render_score(0.25), 25);
        assert_eq!(render_score(0.125), 13);
        assert_eq!(render_score(1.0), 100);
        assert_eq!(render_score(0.0), 0);
        assert_eq!(render_score(2.0 / 3.0), 67);
    }

    #[test]
    fn extraction_rules() {
        assert_eq!(extract_code("here:\n```python\nx = 1\n```\n").unwrap(), "x = 1");
        let two = "prose\n```python\nfirst\n```\nmore prose\n```\nsecond\n```";
        assert_eq!(extract_code(two).unwrap(), "second");
        assert_eq!(extract_code("just words, no code"), Err(PromptError::NoCode));
        let bare = "Sure thing.\ndef solve(s):\n    print(s)\n";
        assert_eq!(extract_code(bare).unwrap(), "def solve(s):\n    print(s)\n");
        assert_eq!(extract_code("```\n```"), Err(PromptError::NoCode));
        assert_eq!(extract_code("```py\nunclosed\n").unwrap(), "unclosed");
    }

    proptest! {
        #[test]
        fn fenced_block_round_trip(lines in proptest::collection::vec("[a-z =()+0-9]{0,12}", 1..6)) {
            let body = lines.join("\n");
            prop_assume!(!body.trim().is_empty());
            let response = fenced(&body);
            prop_assert_eq!(extract_code(&response).unwrap(), body);
        }

        #[test]
        fn rendered_scores_match_fractions(pass in 0usize..20, extra in 0usize..20) {
            let total = pass + extra + 1;
            let src = problem("s", "S");
            let tgt = problem("t", "T");
            let pair = CandidatePair::new("s", attempt("g", 0, total), attempt("f", pass + 1, total), 0).unwrap();
            let guess = attempt("x", pass, total);
            let spec = RepairPromptSpec::new(vec![(&pair, &src)], &tgt, &guess, PromptStyle::InstructionAndScore);
            let prompt = build_repair_prompt(&spec).unwrap();
            let fix_line = format!("score(A(good)) = {}.", render_score(pair.fix.score));
            let guess_line = format!("score(A(bad)) = {}\n", render_score(guess.score));
            prop_assert!(prompt.contains(&fix_line));
            prop_assert!(prompt.contains(&guess_line));
            prop_assert_eq!(render_score(guess.score), (100.0 * guess.score).round() as i64);
        }
    }
}
