//! Prompt rendering, completion parsing, transcript ingestion, and the
//! session driver for querying chat-completion endpoints.
//!
//! The templates reproduce the published prompt boxes byte for byte,
//! including their idiosyncrasies (the full-feedback box's "you, can play"
//! comma and its missing "machine", the partial box's missing blank line
//! before the question). Task 2 history items say the bystander "earned"
//! points; Task 3 says "received".

mod ingest;
mod session;

pub use ingest::{ingest, read_transcripts, write_transcripts, IngestError};
pub use session::{
    run_session, CompletionClient, EndpointConfig, ScriptedEndpoint, ScriptedPolicy,
    SessionError, TransportError,
};
#[cfg(feature = "live-endpoint")]
pub use session::HttpEndpoint;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::tasks::FeedbackMode;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no valid choice among {labels:?} in completion {completion:?}")]
    NoValidChoice {
        completion: String,
        labels: Vec<String>,
    },
    #[error("at most 24 machines can be labeled, requested {0}")]
    TooManyMachines(usize),
    #[error("cannot parse history line {0:?}")]
    UnparsableHistory(String),
}

/// Which prompt box applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptTemplate {
    /// Four interleaved casinos, dollar rewards.
    Task1,
    /// Single casino, half the visits played by someone else.
    Task2 { feedback: FeedbackMode },
    /// Single casino; mixed blocks interleave observational trials.
    Task3 { mixed: bool },
}

/// One bulleted feedback item.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryLine {
    /// Visit number as printed (global for Task 1, per-block otherwise).
    pub visit: u32,
    /// Casino display number, Task 1 only.
    pub casino: Option<u32>,
    /// True when someone else played this trial.
    pub forced: bool,
    pub machine: String,
    pub reward: f64,
    /// Foregone outcome `(machine, reward)`, full-feedback blocks only.
    pub counterfactual: Option<(String, f64)>,
}

/// Everything needed to render the next prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptState {
    pub template: PromptTemplate,
    pub history: Vec<HistoryLine>,
    /// Current visit number as printed.
    pub visit: u32,
    /// Current casino display number, Task 1 only.
    pub casino: Option<u32>,
    /// Option labels in the order the question presents them.
    pub options_display: [String; 2],
}

const ELIGIBLE_LETTERS: [char; 24] = [
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R', 'S',
    'T', 'V', 'W', 'X', 'Y', 'Z',
];

/// Draw `n_machines` distinct machine labels; the meaningful letters U and
/// I are excluded.
pub fn assign_labels(rng: &mut impl Rng, n_machines: usize) -> Result<Vec<String>, LlmError> {
    if n_machines > ELIGIBLE_LETTERS.len() {
        return Err(LlmError::TooManyMachines(n_machines));
    }
    let mut pool = ELIGIBLE_LETTERS;
    pool.shuffle(rng);
    Ok(pool[..n_machines].iter().map(|c| c.to_string()).collect())
}

fn fmt_reward(r: f64) -> String {
    format!("{r:.1}")
}

fn intro(template: PromptTemplate) -> String {
    match template {
        PromptTemplate::Task1 => "You are going to visit four different casinos (named 1, 2, 3, and 4) 24 times each. Each casino owns two slot machines which all return either 0.5 or 0 dollars stochastically with different reward probabilities. Your goal is to maximize the sum of received dollars within 96 visits.".to_string(),
        PromptTemplate::Task2 { feedback: FeedbackMode::Partial } => "You will visit a casino 40 times. The casino has two slot machines that stochastically return either 1 or -1 with different reward probabilities. You can only interact with one slot machine per visit. Half of the time you visit the casino, you can play, the other someone else is playing. During visits where you can play, you'll earn points from the chosen machine. During visits where someone else is playing, you'll learn what points are earned on the chosen machine. Your goal is to maximize the total amount of points you receive in all 20 visits you can play.".to_string(),
        PromptTemplate::Task2 { feedback: FeedbackMode::Full } => "You will visit a casino 40 times. The casino has two slot machines that stochastically return either 1 or -1 with different reward probabilities. You can only interact with one slot machine per visit. Half of the time you visit the casino, you can play, the other someone else is playing. During visits where you, can play, you'll earn points from the chosen machine. You'll also learn what points would have been earned had the other machine been selected. During visits where someone else is playing, you'll learn what points are earned on the chosen and what points would have been earned had the other machine been selected. Nevertheless, you only accumulate points from the machine you choose to play. Your goal is to maximize the total amount of points you receive in all 20 visits you can play.".to_string(),
        PromptTemplate::Task3 { mixed: false } => "You will visit a casino 40 times. The casino has two slot machines that stochastically return either 1 or -1 with different reward probabilities. You can only interact with one slot machine per visit. Your goal is to maximize the total amount of points you receive in all 40 visits you can play.".to_string(),
        PromptTemplate::Task3 { mixed: true } => "You will visit a casino 80 times. The casino has two slot machines that stochastically return either 1 or -1 with different reward probabilities. You can only interact with one slot machine per visit. Half of the time you visit the casino, you can play, the other half someone else is playing and you can only see the rewards for their chosen slot machine. Your goal is to maximize the total amount of points you receive in all 40 visits you can play.".to_string(),
    }
}

fn history_header(template: PromptTemplate) -> &'static str {
    match template {
        PromptTemplate::Task1 => {
            "You have received the following amount of dollars when playing in the past:"
        }
        _ => "During your previous visits you have observed the following:",
    }
}

fn render_history_item(template: PromptTemplate, line: &HistoryLine) -> String {
    match template {
        PromptTemplate::Task1 => format!(
            "- Machine {} in Casino {} delivered {} dollars.",
            line.machine,
            line.casino.expect("Task 1 history carries a casino"),
            fmt_reward(line.reward)
        ),
        PromptTemplate::Task2 { .. } | PromptTemplate::Task3 { .. } => {
            let verb = match (template, line.forced) {
                (_, false) => "you played",
                (PromptTemplate::Task3 { .. }, true) => "someone else played",
                (_, true) => "someone else played",
            };
            let outcome_verb = match (template, line.forced) {
                // Task 3's observational items say "received".
                (PromptTemplate::Task3 { .. }, true) => "received",
                _ => "earned",
            };
            let mut item = format!(
                "- On visit {} {verb} Machine {} and {outcome_verb} {} point.",
                line.visit,
                line.machine,
                fmt_reward(line.reward)
            );
            if let Some((machine, reward)) = &line.counterfactual {
                let who = if line.forced { "the player" } else { "you" };
                item.push_str(&format!(
                    "\n  On Machine {machine} {who} would have earned {} point.",
                    fmt_reward(*reward)
                ));
            }
            item
        }
    }
}

fn question(state: &PromptState) -> String {
    let [a, b] = &state.options_display;
    match state.template {
        PromptTemplate::Task1 => format!(
            "Q: You are now in visit {} playing in Casino {}. Which machine do you choose between Machine {a} and Machine {b}?",
            state.visit,
            state.casino.expect("Task 1 question names a casino"),
        ),
        _ => format!(
            "Q: You are now in visit {}. Which machine do you choose between Machine {a} and Machine {b}?",
            state.visit
        ),
    }
}

/// Render the full prompt, ending in the `A: Machine` stub the model
/// completes.
pub fn render_prompt(state: &PromptState) -> String {
    let items: Vec<String> = state
        .history
        .iter()
        .map(|l| render_history_item(state.template, l))
        .collect();
    let bullets = items.join("\n");
    let head = format!(
        "{}\n\n{}\n\n",
        intro(state.template),
        history_header(state.template)
    );
    let q = question(state);
    match state.template {
        PromptTemplate::Task1 => {
            if bullets.is_empty() {
                format!("{head}{q}\n\nA: Machine")
            } else {
                format!("{head}{bullets}\n\n{q}\n\nA: Machine")
            }
        }
        // The published partial-feedback box runs the question directly
        // after the last history item.
        PromptTemplate::Task2 {
            feedback: FeedbackMode::Partial,
        } => {
            if bullets.is_empty() {
                format!("{head}{q}\nA: Machine")
            } else {
                format!("{head}{bullets}\n{q}\nA: Machine")
            }
        }
        _ => {
            if bullets.is_empty() {
                format!("{head}{q}\nA: Machine")
            } else {
                format!("{head}{bullets}\n\n{q}\nA: Machine")
            }
        }
    }
}

/// Extract the chosen machine label from a completion: the first
/// standalone eligible letter, case-insensitive, surrounding punctuation
/// stripped.
pub fn parse_choice(completion: &str, valid_labels: &[String]) -> Result<String, LlmError> {
    for token in completion.split_whitespace() {
        let stripped = token.trim_matches(|c: char| !c.is_alphanumeric());
        let mut chars = stripped.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            continue;
        };
        if !c.is_ascii_alphabetic() {
            continue;
        }
        let candidate = c.to_ascii_uppercase().to_string();
        if valid_labels
            .iter()
            .any(|l| l.eq_ignore_ascii_case(&candidate))
        {
            return Ok(candidate);
        }
    }
    Err(LlmError::NoValidChoice {
        completion: completion.to_string(),
        labels: valid_labels.to_vec(),
    })
}

fn parse_reward(text: &str) -> Result<f64, LlmError> {
    text.parse::<f64>()
        .map_err(|_| LlmError::UnparsableHistory(text.to_string()))
}

/// Parse one rendered history item back into its structured form.
/// Full-feedback items span two lines (the bullet plus its indented
/// counterfactual).
pub fn parse_history_item(template: PromptTemplate, item: &str) -> Result<HistoryLine, LlmError> {
    let err = || LlmError::UnparsableHistory(item.to_string());
    let mut lines = item.lines();
    let first = lines.next().ok_or_else(err)?;
    match template {
        PromptTemplate::Task1 => {
            let rest = first.strip_prefix("- Machine ").ok_or_else(err)?;
            let (machine, rest) = rest.split_once(" in Casino ").ok_or_else(err)?;
            let (casino, rest) = rest.split_once(" delivered ").ok_or_else(err)?;
            let reward = rest.strip_suffix(" dollars.").ok_or_else(err)?;
            Ok(HistoryLine {
                visit: 0,
                casino: Some(casino.parse().map_err(|_| err())?),
                forced: false,
                machine: machine.to_string(),
                reward: parse_reward(reward)?,
                counterfactual: None,
            })
        }
        _ => {
            let rest = first.strip_prefix("- On visit ").ok_or_else(err)?;
            let (visit, rest) = rest.split_once(' ').ok_or_else(err)?;
            let (forced, rest) = if let Some(r) = rest.strip_prefix("you played Machine ") {
                (false, r)
            } else if let Some(r) = rest.strip_prefix("someone else played Machine ") {
                (true, r)
            } else {
                return Err(err());
            };
            let (machine, rest) = rest.split_once(' ').ok_or_else(err)?;
            let reward = rest
                .strip_prefix("and earned ")
                .or_else(|| rest.strip_prefix("and received "))
                .and_then(|r| r.strip_suffix(" point."))
                .ok_or_else(err)?;
            let counterfactual = match lines.next() {
                None => None,
                Some(second) => {
                    let rest = second
                        .trim_start()
                        .strip_prefix("On Machine ")
                        .ok_or_else(err)?;
                    let (machine, rest) = rest.split_once(' ').ok_or_else(err)?;
                    let r = rest
                        .strip_prefix("you would have earned ")
                        .or_else(|| rest.strip_prefix("the player would have earned "))
                        .and_then(|r| r.strip_suffix(" point."))
                        .ok_or_else(err)?;
                    Some((machine.to_string(), parse_reward(r)?))
                }
            };
            Ok(HistoryLine {
                visit: visit.parse().map_err(|_| err())?,
                casino: None,
                forced,
                machine: machine.to_string(),
                reward: parse_reward(reward)?,
                counterfactual,
            })
        }
    }
}

/// Pull the bulleted history section out of a rendered prompt and parse
/// every item.
pub fn parse_history(template: PromptTemplate, prompt: &str) -> Result<Vec<HistoryLine>, LlmError> {
    let mut items: Vec<String> = Vec::new();
    for line in prompt.lines() {
        if line.starts_with("- ") {
            items.push(line.to_string());
        } else if line.starts_with("  On Machine ") {
            let last = items
                .last_mut()
                .ok_or_else(|| LlmError::UnparsableHistory(line.to_string()))?;
            last.push('\n');
            last.push_str(line);
        }
    }
    items
        .iter()
        .map(|item| parse_history_item(template, item))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskRng;
    use rand::SeedableRng;

    fn section31_state() -> PromptState {
        PromptState {
            template: PromptTemplate::Task1,
            history: vec![
                HistoryLine {
                    visit: 1,
                    casino: Some(4),
                    forced: false,
                    machine: "B".into(),
                    reward: 0.5,
                    counterfactual: None,
                },
                HistoryLine {
                    visit: 2,
                    casino: Some(1),
                    forced: false,
                    machine: "F".into(),
                    reward: 0.0,
                    counterfactual: None,
                },
                HistoryLine {
                    visit: 3,
                    casino: Some(4),
                    forced: false,
                    machine: "B".into(),
                    reward: 0.5,
                    counterfactual: None,
                },
            ],
            visit: 4,
            casino: Some(4),
            options_display: ["R".into(), "B".into()],
        }
    }

    #[test]
    fn task1_prompt_structure() {
        let text = render_prompt(&section31_state());
        assert!(text.starts_with("You are going to visit four different casinos"));
        assert!(text.contains("\n\n- Machine B in Casino 4 delivered 0.5 dollars.\n"));
        assert!(text.contains("- Machine F in Casino 1 delivered 0.0 dollars.\n"));
        assert!(text.contains(
            "\n\nQ: You are now in visit 4 playing in Casino 4. Which machine do you choose between Machine R and Machine B?\n\nA: Machine"
        ));
        assert!(text.ends_with("A: Machine"));
    }

    #[test]
    fn empty_history_renders_base_template() {
        let mut state = section31_state();
        state.history.clear();
        state.visit = 1;
        let text = render_prompt(&state);
        assert!(text.contains(
            "You have received the following amount of dollars when playing in the past:\n\nQ: You are now in visit 1"
        ));
    }

    #[test]
    fn task2_full_counterfactual_lines() {
        let state = PromptState {
            template: PromptTemplate::Task2 {
                feedback: FeedbackMode::Full,
            },
            history: vec![
                HistoryLine {
                    visit: 1,
                    casino: None,
                    forced: true,
                    machine: "H".into(),
                    reward: 1.0,
                    counterfactual: Some(("E".into(), -1.0)),
                },
                HistoryLine {
                    visit: 2,
                    casino: None,
                    forced: false,
                    machine: "H".into(),
                    reward: 1.0,
                    counterfactual: Some(("E".into(), -1.0)),
                },
            ],
            visit: 3,
            casino: None,
            options_display: ["E".into(), "H".into()],
        };
        let text = render_prompt(&state);
        assert!(text.contains("- On visit 1 someone else played Machine H and earned 1.0 point.\n  On Machine E the player would have earned -1.0 point.\n"));
        assert!(text.contains("- On visit 2 you played Machine H and earned 1.0 point.\n  On Machine E you would have earned -1.0 point.\n"));
        assert!(text.contains("point.\n\nQ: You are now in visit 3."));
    }

    #[test]
    fn task3_forced_items_say_received() {
        let state = PromptState {
            template: PromptTemplate::Task3 { mixed: true },
            history: vec![HistoryLine {
                visit: 2,
                casino: None,
                forced: true,
                machine: "N".into(),
                reward: -1.0,
                counterfactual: None,
            }],
            visit: 3,
            casino: None,
            options_display: ["N".into(), "H".into()],
        };
        let text = render_prompt(&state);
        assert!(text.contains("- On visit 2 someone else played Machine N and received -1.0 point."));
    }

    #[test]
    fn labels_exclude_meaningful_letters() {
        let mut rng = TaskRng::seed_from_u64(0);
        for _ in 0..200 {
            let labels = assign_labels(&mut rng, 8).unwrap();
            assert_eq!(labels.len(), 8);
            for l in &labels {
                assert!(l != "U" && l != "I", "forbidden label {l}");
            }
            let mut dedup = labels.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), 8);
        }
        assert!(assign_labels(&mut rng, 25).is_err());
    }

    #[test]
    fn label_frequencies_are_uniform() {
        let mut rng = TaskRng::seed_from_u64(5);
        let n = 10_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let labels = assign_labels(&mut rng, 1).unwrap();
            *counts.entry(labels[0].clone()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 24);
        for (label, count) in counts {
            let freq = count as f64 / n as f64;
            assert!(
                (freq - 1.0 / 24.0).abs() < 0.01,
                "label {label} frequency {freq}"
            );
        }
    }

    #[test]
    fn parse_choice_examples() {
        let labels = vec!["R".to_string(), "B".to_string()];
        assert_eq!(parse_choice(" B", &labels).unwrap(), "B");
        assert_eq!(parse_choice("R. Because it paid best.", &labels).unwrap(), "R");
        assert_eq!(parse_choice("machine b", &labels).unwrap(), "B");
        assert!(matches!(
            parse_choice("machine Z", &labels),
            Err(LlmError::NoValidChoice { .. })
        ));
        assert!(parse_choice("", &labels).is_err());
    }

    #[test]
    fn history_roundtrip() {
        let state = section31_state();
        let text = render_prompt(&state);
        let parsed = parse_history(PromptTemplate::Task1, &text).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0].machine, "B");
        assert_eq!(parsed[0].casino, Some(4));
        assert_eq!(parsed[0].reward, 0.5);
        assert_eq!(parsed[1].reward, 0.0);
    }
}
