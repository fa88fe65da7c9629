use std::collections::BTreeMap;

use damplab_core::fem::Mesh;
use damplab_core::measure::AtomSet;
use damplab_core::spectral::{Generator, Spectrum};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::report::{Artifact, Format, Verdict};
use crate::CliError;

/// State shared by the tasks of one run. Upstream tasks fill the optional
/// slots for downstream ones.
pub struct Context<'c> {
    pub config: &'c ExperimentConfig,
    pub mesh: Option<Mesh>,
    pub atoms: Option<AtomSet>,
    pub generator: Option<Generator>,
    pub spectrum: Option<Spectrum>,
}

impl<'c> Context<'c> {
    pub fn new(config: &'c ExperimentConfig) -> Self {
        Self { config, mesh: None, atoms: None, generator: None, spectrum: None }
    }

    pub fn generator(&self, task: &'static str) -> Result<&Generator, CliError> {
        self.generator.as_ref().ok_or(CliError::MissingInput { task, needs: "assemble" })
    }

    pub fn spectrum(&self, task: &'static str) -> Result<&Spectrum, CliError> {
        self.spectrum.as_ref().ok_or(CliError::MissingInput { task, needs: "spectrum" })
    }
}

#[derive(Debug, Default)]
pub struct TaskOutput {
    pub result: Value,
    pub verdicts: Vec<Verdict>,
    pub artifacts: Vec<(Format, String)>,
}

impl TaskOutput {
    pub fn into_parts(self, task: &str) -> (Value, Vec<Verdict>, Vec<Artifact>) {
        let artifacts =
            self.artifacts.into_iter().map(|(format, content)| Artifact { task: task.to_string(), format, content });
        (self.result, self.verdicts, artifacts.collect())
    }
}

pub trait Task: Send + Sync {
    fn name(&self) -> &'static str;

    /// Tasks that must run first.
    fn requires(&self) -> &'static [&'static str] {
        &[]
    }

    fn run(&self, ctx: &mut Context<'_>) -> Result<TaskOutput, CliError>;
}

/// Named tasks in their canonical execution order.
pub struct Registry {
    tasks: Vec<Box<dyn Task>>,
    index: BTreeMap<&'static str, usize>,
}

impl Registry {
    pub fn empty() -> Self {
        Self { tasks: Vec::new(), index: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for t in crate::tasks::builtin() {
            r.register(t);
        }
        r
    }

    /// Adds a task; a later registration under the same name replaces the
    /// earlier one but keeps its position.
    pub fn register(&mut self, task: Box<dyn Task>) {
        match self.index.get(task.name()) {
            Some(&i) => self.tasks[i] = task,
            None => {
                self.index.insert(task.name(), self.tasks.len());
                self.tasks.push(task);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&dyn Task> {
        self.index.get(name).map(|&i| self.tasks[i].as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.tasks.iter().map(|t| t.name()).collect()
    }

    /// The requested tasks plus everything they depend on, in registration
    /// order (dependencies are always registered before their dependents).
    pub fn plan(&self, requested: &[String]) -> Result<Vec<&dyn Task>, CliError> {
        let mut wanted = vec![false; self.tasks.len()];
        let mut stack: Vec<String> = requested.to_vec();
        while let Some(name) = stack.pop() {
            let &i = self.index.get(name.as_str()).ok_or_else(|| CliError::UnknownTask(name.clone()))?;
            if !wanted[i] {
                wanted[i] = true;
                stack.extend(self.tasks[i].requires().iter().map(|s| s.to_string()));
            }
        }
        let plan: Vec<&dyn Task> =
            self.tasks.iter().zip(&wanted).filter(|(_, &w)| w).map(|(t, _)| t.as_ref()).collect();
        for (pos, t) in plan.iter().enumerate() {
            for dep in t.requires() {
                if !plan[..pos].iter().any(|d| d.name() == *dep) {
                    return Err(CliError::Config(format!("task {} must be registered after {dep}", t.name())));
                }
            }
        }
        Ok(plan)
    }
}
