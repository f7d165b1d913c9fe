use std::sync::Arc;

use thiserror::Error;

use super::config::{Configuration, ProcessState};
use super::trace::{Event, EventOp, Trace};
use super::{MemoryModel, Operation, ProcessId, RegisterId, RegisterSpec, Response, Schedule, Section, Step, Value};
use crate::algorithm::{PendingAction, Program};
use crate::process_set::MAX_PROCESSES;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("register {0} declared twice")]
    DuplicateRegister(RegisterId),
    #[error("register {register} is owned by unknown process {owner}")]
    UnknownOwner { register: RegisterId, owner: ProcessId },
    #[error("register ids must be 0..{count}; found {found}")]
    SparseRegisterIds { count: usize, found: RegisterId },
    #[error("process count {0} outside 1..={MAX_PROCESSES}")]
    ProcessCount(usize),
    #[error("process {0} does not exist")]
    UnknownProcess(ProcessId),
    #[error("process {0} has finished its super-passage and cannot take a normal step")]
    StepOfFinished(ProcessId),
    #[error("program fault at {pid}: {reason}")]
    ProgramFault { pid: ProcessId, reason: String },
    #[error("{pid} emitted {action} while in section {section:?}")]
    SectionViolation {
        pid: ProcessId,
        action: &'static str,
        section: Section,
    },
    #[error("step {index}: {source}")]
    AtStep {
        index: usize,
        #[source]
        source: Box<ModelError>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SystemOptions {
    /// Whether a crash step drops the crashed process's CC cache copies.
    pub crash_clears_cache: bool,
}

impl Default for SystemOptions {
    fn default() -> Self {
        SystemOptions {
            crash_clears_cache: true,
        }
    }
}

/// A fixed set of `n` processes running one program over a fixed register
/// layout, under one cost model.
#[derive(Clone)]
pub struct System {
    n: usize,
    program: Arc<dyn Program>,
    registers: Vec<RegisterSpec>,
    model: MemoryModel,
    options: SystemOptions,
}

impl std::fmt::Debug for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("System")
            .field("n", &self.n)
            .field("program", &self.program.name())
            .field("registers", &self.registers.len())
            .field("model", &self.model)
            .finish()
    }
}

impl System {
    /// Builds a system using the program's own register layout.
    pub fn new(program: Arc<dyn Program>, n: usize, model: MemoryModel) -> Result<Self, ModelError> {
        let registers = program.layout(n);
        Self::with_registers(program, n, model, registers)
    }

    pub fn with_registers(
        program: Arc<dyn Program>,
        n: usize,
        model: MemoryModel,
        mut registers: Vec<RegisterSpec>,
    ) -> Result<Self, ModelError> {
        if n == 0 || n > MAX_PROCESSES {
            return Err(ModelError::ProcessCount(n));
        }
        registers.sort_by_key(|r| r.id);
        for pair in registers.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(ModelError::DuplicateRegister(pair[0].id));
            }
        }
        for (i, r) in registers.iter().enumerate() {
            if r.id.0 as usize != i {
                return Err(ModelError::SparseRegisterIds {
                    count: registers.len(),
                    found: r.id,
                });
            }
            if let Some(owner) = r.owner {
                if owner.index() >= n {
                    return Err(ModelError::UnknownOwner { register: r.id, owner });
                }
            }
        }
        Ok(System {
            n,
            program,
            registers,
            model,
            options: SystemOptions::default(),
        })
    }

    pub fn with_options(mut self, options: SystemOptions) -> Self {
        self.options = options;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn model(&self) -> MemoryModel {
        self.model
    }

    pub fn options(&self) -> SystemOptions {
        self.options
    }

    pub fn program(&self) -> &Arc<dyn Program> {
        &self.program
    }

    pub fn registers(&self) -> &[RegisterSpec] {
        &self.registers
    }

    pub fn owner(&self, reg: RegisterId) -> Option<ProcessId> {
        self.registers[reg.0 as usize].owner
    }

    pub fn pids(&self) -> impl Iterator<Item = ProcessId> {
        (1..=self.n as u32).map(ProcessId::new)
    }

    fn check_pid(&self, pid: ProcessId) -> Result<(), ModelError> {
        if pid.index() < self.n {
            Ok(())
        } else {
            Err(ModelError::UnknownProcess(pid))
        }
    }

    /// `C₀`.
    pub fn initial_config(&self) -> Configuration {
        let procs = self
            .pids()
            .map(|p| ProcessState {
                local: self.program.initial_state(p),
                section: Section::Remainder,
                crashes: 0,
                ever_cs: false,
                cs_rmr: false,
                rmrs: 0,
            })
            .collect();
        Configuration {
            values: self.registers.iter().map(|r| r.initial.clone()).collect(),
            procs,
            cache: vec![Default::default(); self.n],
            last_accessor: vec![None; self.registers.len()],
            touched: vec![Default::default(); self.registers.len()],
            finished: Default::default(),
        }
    }

    /// Whether `pid` performing `op` on `reg` in `config` is a remote memory
    /// reference.
    pub fn rmr_of(&self, config: &Configuration, pid: ProcessId, op: &Operation, reg: RegisterId) -> bool {
        match self.model {
            MemoryModel::Cc => !op.is_read() || !config.cache[pid.index()].contains(&reg),
            MemoryModel::Dsm => self.owner(reg) != Some(pid),
        }
    }

    /// The action `pid` would perform on its next normal step.
    pub fn pending(&self, config: &Configuration, pid: ProcessId) -> Result<PendingAction, ModelError> {
        self.check_pid(pid)?;
        if config.finished.contains(pid) {
            return Err(ModelError::StepOfFinished(pid));
        }
        let action = self
            .program
            .action(pid, &config.procs[pid.index()].local)
            .map_err(|reason| ModelError::ProgramFault { pid, reason })?;
        if let PendingAction::MemOp { reg, .. } = &action {
            if reg.0 as usize >= self.registers.len() {
                return Err(ModelError::ProgramFault {
                    pid,
                    reason: format!("undeclared register {reg}"),
                });
            }
        }
        Ok(action)
    }

    /// Whether the next normal step of `pid` incurs an RMR. Pure section
    /// transitions never do.
    pub fn next_step_rmr(&self, config: &Configuration, pid: ProcessId) -> Result<bool, ModelError> {
        Ok(match self.pending(config, pid)? {
            PendingAction::MemOp { op, reg } => self.rmr_of(config, pid, &op, reg),
            _ => false,
        })
    }

    /// Executes one step in place and returns its event.
    pub fn step(&self, config: &mut Configuration, step: Step) -> Result<Event, ModelError> {
        self.check_pid(step.pid)?;
        if step.crash {
            Ok(self.crash(config, step.pid))
        } else {
            self.normal_step(config, step.pid)
        }
    }

    fn crash(&self, config: &mut Configuration, pid: ProcessId) -> Event {
        let finished = config.finished.contains(pid);
        let p = &mut config.procs[pid.index()];
        p.crashes += 1;
        if !finished {
            p.local = self.program.recover_state(pid);
            p.section = Section::Recover;
            p.cs_rmr = false;
            if self.options.crash_clears_cache {
                config.cache[pid.index()].clear();
            }
        }
        Event {
            pid,
            op: EventOp::Crash,
            reg: None,
            rmr: false,
            response: None,
            section_after: config.procs[pid.index()].section,
        }
    }

    fn normal_step(&self, config: &mut Configuration, pid: ProcessId) -> Result<Event, ModelError> {
        let action = self.pending(config, pid)?;
        let idx = pid.index();
        if config.procs[idx].section == Section::Remainder {
            config.procs[idx].section = Section::Entry;
        }
        let section = config.procs[idx].section;
        let (op, reg, rmr, response) = match action {
            PendingAction::MemOp { op, reg } => {
                let rmr = self.rmr_of(config, pid, &op, reg);
                let response = apply_register_op(config, self.model, pid, &op, reg);
                let p = &mut config.procs[idx];
                if rmr {
                    p.rmrs += 1;
                    if p.section == Section::Cs {
                        p.cs_rmr = true;
                    }
                }
                (EventOp::from_operation(&op), Some(reg), rmr, Some(response))
            }
            PendingAction::EnterCs => {
                if !matches!(section, Section::Entry | Section::Recover) {
                    return Err(ModelError::SectionViolation {
                        pid,
                        action: "EnterCS",
                        section,
                    });
                }
                let p = &mut config.procs[idx];
                p.section = Section::Cs;
                p.ever_cs = true;
                p.cs_rmr = false;
                (EventOp::EnterCs, None, false, None)
            }
            PendingAction::LeaveCs => {
                if section != Section::Cs {
                    return Err(ModelError::SectionViolation {
                        pid,
                        action: "LeaveCS",
                        section,
                    });
                }
                config.procs[idx].section = Section::Exit;
                (EventOp::LeaveCs, None, false, None)
            }
            PendingAction::CompleteSuperPassage => {
                if !matches!(section, Section::Exit | Section::Recover) {
                    return Err(ModelError::SectionViolation {
                        pid,
                        action: "CompleteSuperPassage",
                        section,
                    });
                }
                config.procs[idx].section = Section::Remainder;
                config.finished.insert(pid);
                (EventOp::Complete, None, false, None)
            }
        };
        let next = self
            .program
            .advance(pid, &config.procs[idx].local, response.as_ref())
            .map_err(|reason| ModelError::ProgramFault { pid, reason })?;
        config.procs[idx].local = next;
        Ok(Event {
            pid,
            op,
            reg,
            rmr,
            response,
            section_after: config.procs[idx].section,
        })
    }

    /// `E(C, σ)`: folds `step` over the schedule.
    pub fn execute(&self, config: &Configuration, schedule: &Schedule) -> Result<(Configuration, Trace), ModelError> {
        let mut c = config.clone();
        let trace = self.execute_in_place(&mut c, schedule)?;
        Ok((c, trace))
    }

    pub fn execute_in_place(&self, config: &mut Configuration, schedule: &Schedule) -> Result<Trace, ModelError> {
        let mut trace = Trace::new();
        for (index, s) in schedule.steps().iter().enumerate() {
            let e = self.step(config, *s).map_err(|source| ModelError::AtStep {
                index,
                source: Box::new(source),
            })?;
            trace.push(e);
        }
        Ok(trace)
    }

    /// `E(σ) = E(C₀, σ)`.
    pub fn run(&self, schedule: &Schedule) -> Result<(Configuration, Trace), ModelError> {
        self.execute(&self.initial_config(), schedule)
    }
}

/// Applies one register operation, updating the value, `last_R`, the access
/// history and (under CC) the cache copies. Returns the response.
pub fn apply_register_op(
    config: &mut Configuration,
    model: MemoryModel,
    pid: ProcessId,
    op: &Operation,
    reg: RegisterId,
) -> Response {
    let r = reg.0 as usize;
    let current = &mut config.values[r];
    let response = match op {
        Operation::Read => Response::Value(current.clone()),
        Operation::Fas(new) => Response::Value(std::mem::replace(current, new.clone())),
        Operation::Fai => {
            let old = current.clone();
            if let Value::Int(x) = current {
                *x += 1;
            }
            Response::Value(old)
        }
        Operation::Cas { expected, new } => {
            if current == expected {
                *current = new.clone();
                Response::Bool(true)
            } else {
                Response::Bool(false)
            }
        }
    };
    config.last_accessor[r] = Some(pid);
    config.touched[r].insert(pid);
    if model == MemoryModel::Cc {
        if op.is_read() {
            config.cache[pid.index()].insert(reg);
        } else {
            for c in config.cache.iter_mut() {
                c.remove(&reg);
            }
        }
    }
    response
}
