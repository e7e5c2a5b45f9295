//! Models and logs bundled with the crate.

use crate::petri::WorkflowNet;

pub const N1_JSON: &str = include_str!("../assets/n1.json");
pub const CHOICE_LOOP_JSON: &str = include_str!("../assets/choice_loop.json");
pub const PARALLEL_TAU_JSON: &str = include_str!("../assets/parallel_tau.json");
pub const ADVERSARIAL_JSON: &str = include_str!("../assets/adversarial.json");

pub const DEMO_LOG_CSV: &str = include_str!("../assets/demo_3traces.csv");
pub const ADVERSARIAL_LOG_CSV: &str = include_str!("../assets/adversarial_log.csv");

pub const MODEL_NAMES: [&str; 4] = ["n1", "choice-loop", "parallel-tau", "adversarial"];
pub const LOG_NAMES: [&str; 2] = ["bundled-3traces", "adversarial"];

fn parse(json: &str) -> WorkflowNet {
    WorkflowNet::from_json(json).expect("bundled model is valid")
}

/// Three-place sequence: a or τ, then b or c.
pub fn n1() -> WorkflowNet {
    parse(N1_JSON)
}

pub fn choice_loop() -> WorkflowNet {
    parse(CHOICE_LOOP_JSON)
}

pub fn parallel_tau() -> WorkflowNet {
    parse(PARALLEL_TAU_JSON)
}

/// Two branches whose first activities make a short window commit early.
pub fn adversarial() -> WorkflowNet {
    parse(ADVERSARIAL_JSON)
}

pub fn model(name: &str) -> Option<WorkflowNet> {
    match name {
        "n1" => Some(n1()),
        "choice-loop" => Some(choice_loop()),
        "parallel-tau" => Some(parallel_tau()),
        "adversarial" => Some(adversarial()),
        _ => None,
    }
}

pub fn log_csv(name: &str) -> Option<&'static str> {
    match name {
        "bundled-3traces" => Some(DEMO_LOG_CSV),
        "adversarial" => Some(ADVERSARIAL_LOG_CSV),
        _ => None,
    }
}
