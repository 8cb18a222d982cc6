//! Prompt templates and parsers for the structured responses they elicit.
//!
//! Templates are bundled verbatim; the system prompt carries the
//! instructions and the user prompt carries the actual question or task.

use thiserror::Error;

use crate::pipeline::TaskKind;

pub const CLARIFY_QUESTION_TEMPLATE: &str = r#"Objective
Analyze the given question for ambiguities. If the question is ambiguous, your task is to clarify it by interpreting the ambiguous concepts, specifying necessary conditions, or using other methods. Provide as much different clarifications as possible.
An ambiguous question is a question that has different correct answers, depending on individual interpretations. Your clarifications are supposed to remove any ambiguity in the question so every clarified question will have a single possible correct answer. These ambiguities can arise from various factors, including but not limited to:
1. Ambiguous references to entities in the question.
2. Multiple properties of objects/entities in the question leading to different interpretations.
3. Ambiguities due to unclear timestamps.
4. Ambiguities stemming from unclear locations.
5. Multiple valid answer types based on the question.
6. References to undefined or underspecified entities in the question.

Important Rules
1. Perform detailed analyses before concluding whether the question is clear or ambiguous. In the analyses, you can rely on your general knowledge to anticipate possible correct answers and interpretations of the question.
2. Output clarifications in the specified format. Do not include possible answers in the clarifications. The clarifications should be only more precise rephrasings of the same question.
3. For each ambiguous question, you are to provide at least two distinct rephrasings that resolve these ambiguities. By "rephrasing," we mean you should reformulate the question to be clear and direct, eliminating any possible ambiguity without altering the original intent of the question. You should not seek further information or produce a binary (yes-no) question as a result of the clarification. Instead, you must create a direct question (wh-question) that aims to obtain a specific answer.
4. Do not provide more than 10 clarifications for an ambiguous question.
5. Do not provide placeholders in your clarifications. They must be fully contained explicit questions. If the question refers to an undefined entity, provide possible values and definitions for the entity in different clarifications.
6. Do not add explainations within the clarifications of the questions. All your reasoning, analyses and explaination should be contained in the Analyses section only.

Output Format
Your output should follow this format:
---Analyses:
[Think step-by-step to reason on the clarity of the question, possible answers and interpretations. After that, output your judgement on whether the question is ambiguous or not]

---Clarifications:
-1 [First rephrased question]
-2 [Second rephrased question]
-3 [Third rephrased question]
...

If the question is clear and unambiguous, simply output:
---Clarifications:
-1 No clarification needed."#;

pub const CLARIFY_INSTRUCTION_TEMPLATE: &str = r#"Objective
Analyze the given task description for ambiguities based on the description itself and the provided task input. If the task description is ambiguous, your task is to clarify it by interpreting the ambiguous concepts, specifying necessary conditions, or using other methods. Provide all possible clarifications.
An ambiguous task is a task that has different correct answers, given the provided input. Your clarifications are supposed to remove any ambiguity in the task so every clarified task will have a single possible correct answer, given the provided input.

Important Rules
1. Perform detailed analyses before concluding whether the task description is clear or ambiguous.
2. Output clarifications in the specified format.
3. Some seemingly unambiguous task descriptions are actually ambiguous given that particular input. So, do not forget to leverage the input to analyze whether the task description is underspecified.
4. You can only clarify the task description. The input should remain the same. Please provide only your reasoning (Analyses) and then the clarified versions of the task description (Clarifications).

Output Format
Your output should follow this format:
---Analyses:
[Think step-by-step to reason on the clarity of the task description. After that, output your judgement on whether the task description is ambiguous or not]

---Clarifications:
-1 [One disambiguated task description]
-2 [Another disambiguated task description]
-3 [Yet another disambiguated task description]
...

If the task description is clear and unambiguous, simply output:
---Clarifications:
-1 No clarification needed."#;

pub const REPHRASE_QUESTION_TEMPLATE: &str = r#"Objective
In this task, you will receive a question. Your goal is to generate multiple versions of the question that convey the same meaning as the original one.

Important Rules
1. Ensure that each rephrasing of the question is distinct from the others.
2. Ensure that all rephrasings of the question are semantically equivalent to the original question.
3. Provide 5 different rephrasings of the question.

Output Format
Your output should follow this format:
---Rephrasings:
-1 [Your rephrased question]
-2 [Another rephrased question]
-3 [Yet another rephrased question]
-4 [A fourth rephrasing of the question]
-5 [A fifth rephrasing of the question]"#;

pub const ANSWER_QUESTION_TEMPLATE: &str = r#"Objective
In the following, I will provide a question and you need to provide a corresponding answer. Your answer has to be short and precise. Do not write extra text or explanation, just give the answer directly. If the question is unclear or you do not know the answer, do not answer with phrases like "I'm sorry.." or "The question is unclear". Instead, you need to give a random guess for the answer. Do not ask follow-up questions or indicate that you do not know the answer. You should always provide a short and precise answer; either the true answer if you know it or your random guess if you are unsure. It should not be recognizable in your output whether your answer is the true answer or the random guess.
Your output should follow the format specified below in the Output Format and Example sections.

Output Format
Answer: [Your short and precise answer or random guess. Do not include any additional information.]

Examples
Question: When did the british army got final defeat against the united state of america?
Answer: February, 1815

Question: What kind of dog in little rascals movie?
Answer: doberman pinscher

Question: Where does the last name carson come from?
Answer: Scottish and Irish origin

Question: Who wrote the music for game of thrones?
Answer: Ramin Djawadi"#;

pub const ANSWER_INSTRUCTION_TEMPLATE: &str = r#"Objective
In the following, I will provide a task description and an input and you need to provide a corresponding answer that solves the task for the given input. Your answer has to be short and precise.
First think step-by-step explaining how you want to solve the task, then give a final concise and precise answer.
If the task is unclear, provide an interpretation that clarifies the task in the reasoning step, then give your final precise answer based on your interpretation.
Your output should follow the format specified below in the Output Format and Example sections.

Output Format
Reasoning: [Provide a description of how you understand and interpret the task and how you are planning to solve it, thinking step-by-step.]
Answer: [Your short and precise solution for the task.]

Example
Task description: Determine the length of a sentence.
Input: "To be or not to be, that is the question."
Reasoning: The task asks for the length of the sentence, which I interpret as the total count of characters, including letters, spaces, punctuation, and any other symbols. Counting all characters in the given input string will yield the correct length of the sentence. Quotation marks will not be included since they are considered as delimiters and not part of the sentence.
Answer: 41"#;

pub const ANSWER_SHORT_TEMPLATE: &str = r#"Objective
In the following, I will provide a question and you need to provide an answer to the question. Your answer has to be short and precise. Do not write extra text or explanation, just give the answer directly. If the question is unclear or you do not know the answer, do not answer with phrases like "I'm sorry.." or "The question is unclear". Instead, you need to give a random guess for the answer. Do not ask follow-up questions or indicate that you do not know the answer. You should always provide a short and precise answer; either the true answer if you know it or your random guess if you are unsure. It should not be recognizable in your output whether your answer is the true answer or the random guess.
Your output should follow the format specified below in the Output Format section.

Output Format
A: [Your short and precise answer or random guess to the question. Do not include any additional information.]"#;

pub const CORRECTNESS_JUDGE_TEMPLATE: &str = r#"Objective
In this task, you will receive a question. You will also receive a ground truth answer to the question and a model generated answer. Your goal is to compare the ground truth answer and the model generated answer in order to decide whether the model generated answer is correct or not.

Important Rules
1. The model generated answer is correct, when it is a valid answer to the question, and semantically equivalent to the ground truth answer. It does not necessarily need to overlap with the ground truth answer lexically.
2. If the model generated answer contains more information (more specific) or less information (less specific) than the ground truth answer, but still correctly answers the question, then you should consider it correct.
3. If you decide that the model generated answer is correct, say yes, otherwise say no.
4. Your output should only contain your decision (yes or no). It should not contain any other text, explanation or reasoning."#;

pub const ENTAILMENT_JUDGE_TEMPLATE: &str = r#"Objective
In this task, you will receive a question and two candidate answers to it, answer A and answer B. Your goal is to decide whether answer A entails answer B in the context of the question, that is, whether stating answer A also commits the speaker to answer B.

Important Rules
1. Say yes only if answer A expresses at least the full meaning of answer B as a response to the question.
2. Differences in wording, word order or formatting of the same content still count as entailment.
3. Your output should only contain your decision (yes or no). It should not contain any other text, explanation or reasoning."#;

pub fn clarification_template(task: TaskKind) -> &'static str {
    match task {
        TaskKind::AmbigQa => CLARIFY_QUESTION_TEMPLATE,
        TaskKind::AmbigInst => CLARIFY_INSTRUCTION_TEMPLATE,
        TaskKind::Paraphrase => REPHRASE_QUESTION_TEMPLATE,
    }
}

pub fn answer_template(task: TaskKind) -> &'static str {
    match task {
        TaskKind::AmbigQa => ANSWER_QUESTION_TEMPLATE,
        TaskKind::AmbigInst => ANSWER_INSTRUCTION_TEMPLATE,
        TaskKind::Paraphrase => ANSWER_SHORT_TEMPLATE,
    }
}

pub fn clarification_user_prompt(task: TaskKind, question: &str) -> String {
    match task {
        // Instruction tasks already carry their own description/input text.
        TaskKind::AmbigInst => question.to_string(),
        _ => format!("Question: {question}"),
    }
}

pub fn answer_user_prompt(task: TaskKind, clarification: &str) -> String {
    match task {
        TaskKind::AmbigInst => clarification.to_string(),
        _ => format!("Question: {clarification}"),
    }
}

pub fn judge_user_prompt(question: &str, gold_answers: &[String], model_answer: &str) -> String {
    format!(
        "Question: {question}\nGround truth answer: {}\nModel generated answer: {model_answer}",
        gold_answers.join("; ")
    )
}

pub fn entailment_user_prompt(question: &str, answer_a: &str, answer_b: &str) -> String {
    format!("Question: {question}\nAnswer A: {answer_a}\nAnswer B: {answer_b}")
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("no clarification marker in response:\n{raw}")]
    MissingMarker { raw: String },
    #[error("clarification list is empty in response:\n{raw}")]
    EmptyClarifications { raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedClarifications {
    pub analysis: String,
    pub items: Vec<String>,
    /// False when the model answered "No clarification needed."
    pub needed: bool,
}

const ANALYSES_MARKER: &str = "---Analyses:";
const CLARIFICATIONS_MARKER: &str = "---Clarifications:";
const REPHRASINGS_MARKER: &str = "---Rephrasings:";

/// Parse a clarification response: the text of the "---Analyses:" block and
/// the "-1 ...", "-2 ..." items after the list marker. The paraphrase
/// template emits "---Rephrasings:" instead of "---Clarifications:"; both
/// markers are accepted for any task.
pub fn parse_clarifications(raw: &str, task: TaskKind) -> Result<ParsedClarifications, ParseError> {
    let markers: [&str; 2] = match task {
        TaskKind::Paraphrase => [REPHRASINGS_MARKER, CLARIFICATIONS_MARKER],
        _ => [CLARIFICATIONS_MARKER, REPHRASINGS_MARKER],
    };
    let (marker_at, marker) = markers
        .iter()
        .find_map(|m| raw.find(m).map(|at| (at, *m)))
        .ok_or_else(|| ParseError::MissingMarker {
            raw: raw.to_string(),
        })?;

    let analysis = raw
        .find(ANALYSES_MARKER)
        .filter(|&at| at < marker_at)
        .map(|at| {
            raw[at + ANALYSES_MARKER.len()..marker_at]
                .trim()
                .to_string()
        })
        .unwrap_or_default();

    let items: Vec<String> = raw[marker_at + marker.len()..]
        .lines()
        .map_while(|line| {
            let line = line.trim();
            if line.starts_with("---") {
                None // next block
            } else {
                Some(line)
            }
        })
        .filter_map(parse_list_item)
        .collect();

    if items.is_empty() {
        return Err(ParseError::EmptyClarifications {
            raw: raw.to_string(),
        });
    }

    let needed = !is_no_clarification(&items[0]);
    Ok(ParsedClarifications {
        analysis,
        items,
        needed,
    })
}

/// "-1 text", "-2. text", "-3) text" -> "text"; anything else is skipped.
fn parse_list_item(line: &str) -> Option<String> {
    let rest = line.strip_prefix('-')?;
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let text = rest[digits..]
        .trim_start_matches(['.', ')', ':'])
        .trim()
        .to_string();
    if text.is_empty() {
        None
    } else {
        Some(text)
    }
}

fn is_no_clarification(item: &str) -> bool {
    item.trim()
        .trim_end_matches('.')
        .eq_ignore_ascii_case("no clarification needed")
}

/// Extract the answer text from a model response. Returns the cleaned text
/// and whether the expected marker was missing (a parse warning, never an
/// error: one malformed sample must not sink a whole question).
pub fn parse_answer(task: TaskKind, raw: &str) -> (String, bool) {
    let trimmed = raw.trim();
    match task {
        // Reasoning precedes the final "Answer:"; take the last marker so
        // mentions of "Answer:" inside the reasoning do not confuse us.
        TaskKind::AmbigInst => match trimmed.rfind("Answer:") {
            Some(at) => (trimmed[at + "Answer:".len()..].trim().to_string(), false),
            None => (trimmed.to_string(), true),
        },
        TaskKind::AmbigQa | TaskKind::Paraphrase => {
            for marker in ["Answer:", "A:"] {
                if let Some(rest) = trimmed.strip_prefix(marker) {
                    return (rest.trim().to_string(), false);
                }
            }
            (trimmed.to_string(), true)
        }
    }
}

/// Strict yes/no parse used by the correctness and entailment judges.
pub fn parse_yes_no(raw: &str) -> Option<bool> {
    match raw.trim().to_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}
