//! Background scan runs started through the API.

use netmap_core::orchestrator::{RunReport, RunStatus};
use serde::{Deserialize, Serialize};

/// Log lines kept per run.
pub const LOG_TAIL: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Finished,
    Failed,
    Cancelled,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        self != RunState::Running
    }

    /// Outcome of a completed orchestrator run.
    pub fn from_report(status: &RunStatus) -> Self {
        match status {
            RunStatus::Running => RunState::Running,
            RunStatus::Completed | RunStatus::StoppedEarly { .. } => RunState::Finished,
            RunStatus::Cancelled => RunState::Cancelled,
            RunStatus::Aborted { .. } => RunState::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub status: RunState,
    pub current_iteration: u32,
    pub planned_iterations: u32,
    pub log: Vec<String>,
    pub report: Option<RunReport>,
    pub error: Option<String>,
}

impl RunHandle {
    pub fn new(run_id: impl Into<String>, planned_iterations: u32) -> Self {
        RunHandle {
            run_id: run_id.into(),
            status: RunState::Running,
            current_iteration: 0,
            planned_iterations,
            log: Vec::new(),
            report: None,
            error: None,
        }
    }

    /// Moves to `next` unless the run already ended. Returns whether the
    /// state changed.
    pub fn advance(&mut self, next: RunState) -> bool {
        if self.status.is_terminal() || next == self.status {
            return false;
        }
        self.status = next;
        true
    }

    pub fn log(&mut self, line: impl Into<String>) {
        let line = line.into();
        tracing::info!(run = %self.run_id, "{line}");
        self.log.push(line);
        if self.log.len() > LOG_TAIL {
            let extra = self.log.len() - LOG_TAIL;
            self.log.drain(..extra);
        }
    }

    /// Folds an orchestrator progress report into the handle.
    pub fn observe(&mut self, report: &RunReport) {
        if let Some(it) = report.iterations.last() {
            if it.index > self.current_iteration {
                self.current_iteration = it.index;
                self.log(format!(
                    "iteration {} done: {} targets, {} nodes, version {}",
                    it.index,
                    it.targets,
                    it.nodes_found,
                    it.version.as_ref().map_or("-".to_string(), ToString::to_string)
                ));
            }
        }
        if report.status != RunStatus::Running {
            for m in report.iterations.iter().flat_map(|i| &i.modules) {
                if let Some(e) = &m.error {
                    self.log(format!("{} failed: {e}", m.label));
                }
            }
            self.advance(RunState::from_report(&report.status));
            self.report = Some(report.clone());
        }
    }

    pub fn fail(&mut self, error: impl Into<String>) {
        let error = error.into();
        self.log(format!("run failed: {error}"));
        self.error = Some(error);
        self.advance(RunState::Failed);
    }
}
