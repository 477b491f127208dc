use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::net::TargetSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Scanner,
    Analyzer,
}

/// One chain element: a module id plus its start options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleInvocation {
    pub module_id: String,
    #[serde(default)]
    pub options: BTreeMap<String, serde_json::Value>,
    /// Name used in reports and as the observation tool name. Defaults to
    /// the module id followed by its options.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ModuleInvocation {
    pub fn new(module_id: impl Into<String>) -> Self {
        ModuleInvocation {
            module_id: module_id.into(),
            options: BTreeMap::new(),
            label: None,
        }
    }

    pub fn with_option(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.options.insert(key.to_string(), value.into());
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        if self.options.is_empty() {
            return self.module_id.clone();
        }
        format!("{}({})", self.module_id, self.options_string())
    }

    /// Options rendered as `k=v,k=v`, sorted by key.
    pub fn options_string(&self) -> String {
        self.options
            .iter()
            .map(|(k, v)| match v {
                serde_json::Value::String(s) => format!("{k}={s}"),
                other => format!("{k}={other}"),
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn option_str(&self, key: &str) -> Option<&str> {
        self.options.get(key).and_then(|v| v.as_str())
    }
}

/// A named toolchain plus the number of passes through it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanningPolicy {
    pub name: String,
    pub chain: Vec<ModuleInvocation>,
    pub iterations: u32,
    /// Allowlist for seeds. Empty means "the initial targets".
    #[serde(default)]
    pub scope: TargetSpec,
}

impl ScanningPolicy {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    EmptyChain,
    ZeroIterations,
    UnknownModule,
    DuplicateLabel,
    AnalyzerOnlyChain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    fn error(kind: DiagnosticKind, message: String) -> Self {
        Diagnostic { severity: Severity::Error, kind, message }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}", self.message)
    }
}

/// Anything that can tell whether a module id is registered, and as what.
pub trait ModuleCatalog {
    fn module_kind(&self, module_id: &str) -> Option<ModuleKind>;
}

impl ModuleCatalog for BTreeMap<String, ModuleKind> {
    fn module_kind(&self, module_id: &str) -> Option<ModuleKind> {
        self.get(module_id).copied()
    }
}

impl ModuleCatalog for HashMap<String, ModuleKind> {
    fn module_kind(&self, module_id: &str) -> Option<ModuleKind> {
        self.get(module_id).copied()
    }
}

/// Checks a policy against the registered modules. An empty result means the
/// policy is fine; warnings do not block a run, errors do.
pub fn validate_policy(policy: &ScanningPolicy, registry: &dyn ModuleCatalog) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if policy.chain.is_empty() {
        out.push(Diagnostic::error(
            DiagnosticKind::EmptyChain,
            "policy chain is empty".to_string(),
        ));
    }
    if policy.iterations == 0 {
        out.push(Diagnostic::error(
            DiagnosticKind::ZeroIterations,
            "iterations must be at least 1".to_string(),
        ));
    }
    let mut kinds = Vec::new();
    let mut labels = BTreeSet::new();
    for (pos, inv) in policy.chain.iter().enumerate() {
        match registry.module_kind(&inv.module_id) {
            Some(k) => kinds.push(k),
            None => out.push(Diagnostic::error(
                DiagnosticKind::UnknownModule,
                format!("chain[{pos}]: unresolved module id `{}`", inv.module_id),
            )),
        }
        let label = inv.label();
        if !labels.insert(label.clone()) {
            out.push(Diagnostic::error(
                DiagnosticKind::DuplicateLabel,
                format!("chain[{pos}]: label `{label}` is used twice; set distinct options or labels"),
            ));
        }
    }
    if !kinds.is_empty()
        && kinds.len() == policy.chain.len()
        && kinds.iter().all(|k| *k == ModuleKind::Analyzer)
    {
        out.push(Diagnostic {
            severity: Severity::Warning,
            kind: DiagnosticKind::AnalyzerOnlyChain,
            message: "chain contains only analyzer modules and will not produce any results"
                .to_string(),
        });
    }
    out
}
