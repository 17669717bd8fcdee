//! Diagnostics shared by the structural rules and the consistency analyzer.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One finding, tied to a rule id and the graph element it concerns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rule: String,
    pub severity: Severity,
    /// Actor, edge, port or dpg id the finding points at.
    pub element: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(rule: &str, element: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            rule: rule.into(),
            severity: Severity::Error,
            element: element.into(),
            message: message.into(),
        }
    }

    pub fn warning(rule: &str, element: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            rule: rule.into(),
            severity: Severity::Warning,
            element: element.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}] {}: {}", self.rule, self.element, self.message)
    }
}
