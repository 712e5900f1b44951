//! Name-keyed registries of interchangeable strategies.
//!
//! Every pluggable piece of the pipeline (feature maps, kernels, bandwidth
//! rules, impurity measures, interval partitioners, multiplier updates) is a
//! trait object registered under a stable name, so a JSON config or a CLI flag
//! can select it at runtime.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Anything that can live in a [`Registry`].
pub trait Named {
    fn name(&self) -> &'static str;
}

pub struct Registry<T: ?Sized + Named> {
    kind: &'static str,
    entries: Vec<Arc<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds a strategy. A later registration under an existing name replaces it.
    pub fn register(&mut self, entry: Arc<T>) -> &mut Self {
        let name = entry.name();
        match self.entries.iter_mut().find(|e| e.name() == name) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .cloned()
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown {} '{}' (available: {})",
                    self.kind,
                    name,
                    self.names().join(", ")
                ))
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name() == name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }
}

impl<T: ?Sized + Named> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.names())
            .finish()
    }
}
