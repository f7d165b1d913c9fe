use std::sync::Arc;

use super::{PendingAction, Program};
use crate::model::{LocalState, Operation, ProcessId, RegisterId, RegisterSpec, Response, Value};

/// One instruction of a [`ScriptedProgram`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MemOp {
    Op(Operation, RegisterId),
    EnterCs,
    LeaveCs,
    Complete,
}

/// A program that ignores responses and cycles through a fixed list of
/// instructions. Process `p` runs `scripts[(p - 1) % scripts.len()]`; a
/// crash sends it back to the first instruction.
///
/// Used for fuzzing the model and for building deliberately pathological
/// algorithms (e.g. one that re-reads a cached register forever).
#[derive(Clone, Debug)]
pub struct ScriptedProgram {
    name: String,
    layout: Vec<RegisterSpec>,
    scripts: Arc<Vec<Vec<MemOp>>>,
}

impl ScriptedProgram {
    /// `registers` unowned registers initialised to `Int(0)`.
    pub fn new(name: impl Into<String>, registers: usize, scripts: Vec<Vec<MemOp>>) -> Self {
        let layout = (0..registers)
            .map(|i| RegisterSpec::new(i as u32, format!("r{i}"), None, Value::Int(0)))
            .collect();
        Self::with_layout(name, layout, scripts)
    }

    pub fn with_layout(name: impl Into<String>, layout: Vec<RegisterSpec>, scripts: Vec<Vec<MemOp>>) -> Self {
        assert!(
            !scripts.is_empty() && scripts.iter().all(|s| !s.is_empty()),
            "scripts must be non-empty"
        );
        ScriptedProgram {
            name: name.into(),
            layout,
            scripts: Arc::new(scripts),
        }
    }

    fn script(&self, pid: ProcessId) -> &[MemOp] {
        &self.scripts[pid.index() % self.scripts.len()]
    }
}

impl Program for ScriptedProgram {
    fn name(&self) -> &str {
        &self.name
    }

    fn layout(&self, _n: usize) -> Vec<RegisterSpec> {
        self.layout.clone()
    }

    fn initial_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(0)
    }

    fn recover_state(&self, _pid: ProcessId) -> LocalState {
        LocalState::at(0)
    }

    fn action(&self, pid: ProcessId, s: &LocalState) -> Result<PendingAction, String> {
        let script = self.script(pid);
        let ins = script
            .get(s.pc as usize)
            .ok_or_else(|| format!("pc {} past end of script", s.pc))?;
        Ok(match ins {
            MemOp::Op(op, reg) => PendingAction::mem(op.clone(), *reg),
            MemOp::EnterCs => PendingAction::EnterCs,
            MemOp::LeaveCs => PendingAction::LeaveCs,
            MemOp::Complete => PendingAction::CompleteSuperPassage,
        })
    }

    fn advance(&self, pid: ProcessId, s: &LocalState, _r: Option<&Response>) -> Result<LocalState, String> {
        let len = self.script(pid).len() as u32;
        Ok(LocalState::at((s.pc + 1) % len))
    }
}
