//! Render each task's prompt template with a short sample history.
//!
//! ```bash
//! cargo run --example render_prompts
//! ```

use banditlab::llm_io::{render_prompt, HistoryLine, PromptState, PromptTemplate};
use banditlab::tasks::FeedbackMode;

fn line(visit: u32, forced: bool, machine: &str, reward: f64) -> HistoryLine {
    HistoryLine {
        visit,
        casino: None,
        forced,
        machine: machine.to_string(),
        reward,
        counterfactual: None,
    }
}

fn main() {
    let states = [
        (
            "Task 1 (casinos, partial feedback)",
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
                ],
                visit: 3,
                casino: Some(4),
                options_display: ["R".into(), "B".into()],
            },
        ),
        (
            "Task 2, full feedback block",
            PromptState {
                template: PromptTemplate::Task2 {
                    feedback: FeedbackMode::Full,
                },
                history: vec![
                    HistoryLine {
                        counterfactual: Some(("E".into(), -1.0)),
                        ..line(1, true, "H", 1.0)
                    },
                    HistoryLine {
                        counterfactual: Some(("E".into(), -1.0)),
                        ..line(2, false, "H", 1.0)
                    },
                ],
                visit: 3,
                casino: None,
                options_display: ["E".into(), "H".into()],
            },
        ),
        (
            "Task 3, mixed block",
            PromptState {
                template: PromptTemplate::Task3 { mixed: true },
                history: vec![
                    line(1, false, "H", 1.0),
                    line(2, true, "N", -1.0),
                ],
                visit: 3,
                casino: None,
                options_display: ["N".into(), "H".into()],
            },
        ),
    ];

    for (name, state) in states {
        println!("──── {name} ────");
        println!("{}\n", render_prompt(&state));
    }
}
