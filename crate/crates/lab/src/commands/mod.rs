//! Subcommand implementations. Each returns its report; the CLI layer writes
//! files and chooses the exit code.

pub mod analyze;
pub mod dpo_check;
pub mod run;
pub mod score;
pub mod sweep;
pub mod throughput;

/// Result of one subcommand.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub result: serde_json::Value,
    pub summary: String,
    /// Checks that ran and did not pass.
    pub failures: Vec<String>,
}

impl CommandOutput {
    pub fn new<T: serde::Serialize>(result: &T, summary: String) -> Self {
        Self { result: serde_json::to_value(result).expect("report values serialize"), summary, failures: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}
