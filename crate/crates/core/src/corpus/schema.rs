use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Classification target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Priority,
    Severity,
    Type,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Priority, Task::Severity, Task::Type];

    pub fn name(self) -> &'static str {
        match self {
            Task::Priority => "priority",
            Task::Severity => "severity",
            Task::Type => "type",
        }
    }

    pub fn classes(self) -> &'static [&'static str] {
        LabelSchema::DOORS.classes(self)
    }

    pub fn num_classes(self) -> usize {
        self.classes().len()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "priority" => Ok(Task::Priority),
            "severity" => Ok(Task::Severity),
            "type" => Ok(Task::Type),
            _ => Err(CorpusError::UnknownTask(s.to_string())),
        }
    }
}

/// Ordered, duplicate-free class sets for the three requirement labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelSchema {
    pub priority_classes: &'static [&'static str],
    pub severity_classes: &'static [&'static str],
    pub type_classes: &'static [&'static str],
}

impl LabelSchema {
    pub const DOORS: LabelSchema = LabelSchema {
        priority_classes: &["Unassigned", "High", "Medium", "Low"],
        severity_classes: &["Normal", "Major", "Undecided", "Minor", "Critical", "Blocker"],
        type_classes: &[
            "Enhancement",
            "Story",
            "Maintenance",
            "Other",
            "Test Task",
            "Plan Item",
            "JUnit",
        ],
    };

    pub fn classes(&self, task: Task) -> &'static [&'static str] {
        match task {
            Task::Priority => self.priority_classes,
            Task::Severity => self.severity_classes,
            Task::Type => self.type_classes,
        }
    }

    pub fn index_of(&self, task: Task, label: &str) -> Option<usize> {
        self.classes(task).iter().position(|c| *c == label)
    }
}

impl Default for LabelSchema {
    fn default() -> Self {
        Self::DOORS
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn class_counts_and_uniqueness() {
        let s = LabelSchema::DOORS;
        assert_eq!(Task::Priority.num_classes(), 4);
        assert_eq!(Task::Severity.num_classes(), 6);
        assert_eq!(Task::Type.num_classes(), 7);
        for t in Task::ALL {
            let set: HashSet<_> = s.classes(t).iter().collect();
            assert_eq!(set.len(), s.classes(t).len());
        }
        assert_eq!(s.index_of(Task::Type, "Test Task"), Some(4));
        assert_eq!(s.index_of(Task::Type, "Defect"), None);
    }

    #[test]
    fn task_names_parse() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("colour".parse::<Task>().is_err());
    }
}
