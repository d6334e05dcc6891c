//! Domain and task roles that select a path through the multi-branch network.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DomainRole {
    #[serde(rename = "sr")]
    Source,
    #[serde(rename = "t")]
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskRole {
    #[serde(rename = "m")]
    Main,
    #[serde(rename = "a")]
    Aux,
}

/// A (domain, task) pair: which domain branch and which task branch a batch
/// travels through. Serialized as `"(sr,m)"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Route {
    pub domain: DomainRole,
    pub task: TaskRole,
}

impl Route {
    pub const SOURCE_MAIN: Route = Route::new(DomainRole::Source, TaskRole::Main);
    pub const SOURCE_AUX: Route = Route::new(DomainRole::Source, TaskRole::Aux);
    pub const TARGET_MAIN: Route = Route::new(DomainRole::Target, TaskRole::Main);
    pub const TARGET_AUX: Route = Route::new(DomainRole::Target, TaskRole::Aux);

    pub const fn new(domain: DomainRole, task: TaskRole) -> Self {
        Self { domain, task }
    }
}

impl fmt::Display for DomainRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainRole::Source => "sr",
            DomainRole::Target => "t",
        })
    }
}

impl fmt::Display for TaskRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskRole::Main => "m",
            TaskRole::Aux => "a",
        })
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.domain, self.task)
    }
}

impl FromStr for Route {
    type Err = String;

    /// Accepts `(sr,m)` or `sr,m`, whitespace-tolerant.
    fn from_str(s: &str) -> Result<Self, String> {
        let inner = s.trim();
        let inner = inner
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .unwrap_or(inner);
        let (d, t) = inner
            .split_once(',')
            .ok_or_else(|| format!("route {s:?} is not of the form (domain,task)"))?;
        let domain = match d.trim() {
            "sr" => DomainRole::Source,
            "t" => DomainRole::Target,
            other => return Err(format!("unknown domain role {other:?}; expected sr or t")),
        };
        let task = match t.trim() {
            "m" => TaskRole::Main,
            "a" => TaskRole::Aux,
            other => return Err(format!("unknown task role {other:?}; expected m or a")),
        };
        Ok(Route { domain, task })
    }
}

impl TryFrom<String> for Route {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Route> for String {
    fn from(r: Route) -> String {
        r.to_string()
    }
}
