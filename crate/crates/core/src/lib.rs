//! Multitask convolutional networks for community question answering.
//!
//! Three related ranking tasks are learned jointly from
//! `(new question, related question, comment)` triples:
//!
//! * **A**: does the comment answer the related question?
//! * **B**: is the related question similar to the new question?
//! * **C**: does the comment answer the new question?
//!
//! The crate is organized bottom-up: [`text`] and [`dataset`] turn raw
//! corpora into token sequences, [`nn`] provides the numeric kernels with
//! hand-written backward passes and the optimizer, [`model`] assembles the
//! sentence encoders and scoring networks, [`train`] runs mini-batch training
//! with early stopping, and [`eval`] reranks candidates and computes MAP/MRR.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod text;
pub mod train;
pub mod verify;

use std::fmt;
use std::str::FromStr;

pub use error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    /// Question-comment similarity.
    A,
    /// Question-question similarity.
    B,
    /// New question-comment similarity.
    C,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::A, Task::B, Task::C];

    pub fn index(self) -> usize {
        match self {
            Task::A => 0,
            Task::B => 1,
            Task::C => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Task::A => 'A',
            Task::B => 'B',
            Task::C => 'C',
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Task::A),
            "B" | "b" => Ok(Task::B),
            "C" | "c" => Ok(Task::C),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

/// A non-empty subset of {A, B, C}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TaskSet([bool; 3]);

impl TaskSet {
    pub const ALL: TaskSet = TaskSet([true; 3]);

    pub fn only(task: Task) -> Self {
        let mut set = [false; 3];
        set[task.index()] = true;
        TaskSet(set)
    }

    pub fn from_tasks(tasks: impl IntoIterator<Item = Task>) -> Result<Self> {
        let mut set = [false; 3];
        for t in tasks {
            set[t.index()] = true;
        }
        if set.iter().any(|&b| b) {
            Ok(TaskSet(set))
        } else {
            Err(Error::InvalidArgument("task set must not be empty".into()))
        }
    }

    pub fn contains(&self, task: Task) -> bool {
        self.0[task.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = Task> + '_ {
        Task::ALL.into_iter().filter(|t| self.contains(*t))
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_subset_of(&self, other: &TaskSet) -> bool {
        Task::ALL
            .iter()
            .all(|&t| !self.contains(t) || other.contains(t))
    }
}

impl fmt::Display for TaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in self.iter() {
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Parses `"ABC"`, `"A,C"` or `"b c"`.
impl FromStr for TaskSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tasks = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| c.to_string().parse::<Task>())
            .collect::<Result<Vec<_>>>()?;
        TaskSet::from_tasks(tasks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_set_parsing() {
        let s: TaskSet = "A, c".parse().unwrap();
        assert!(s.contains(Task::A) && !s.contains(Task::B) && s.contains(Task::C));
        assert_eq!(s.to_string(), "AC");
        assert!("".parse::<TaskSet>().is_err());
        assert!("AD".parse::<TaskSet>().is_err());
        assert!(TaskSet::only(Task::C).is_subset_of(&s));
        assert!(!TaskSet::ALL.is_subset_of(&s));
    }
}
