//! Name-keyed factories for the interchangeable strategy families
//! (controllers, gradient evaluators, disturbance forecasts).

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub struct Registry<F> {
    kind: &'static str,
    entries: BTreeMap<String, F>,
}

impl<F> Registry<F> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, entries: BTreeMap::new() }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: impl Into<String>, factory: F) -> &mut Self {
        self.entries.insert(name.into(), factory);
        self
    }

    pub fn get(&self, name: &str) -> Result<&F> {
        self.entries.get(name).ok_or_else(|| Error::UnknownStrategy {
            registry: self.kind,
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_unknown() {
        let mut r: Registry<fn() -> u32> = Registry::new("widget");
        r.register("one", || 1).register("two", || 2);
        assert_eq!((r.get("two").unwrap())(), 2);
        assert_eq!(r.names(), vec!["one", "two"]);
        match r.get("three") {
            Err(Error::UnknownStrategy { registry, available, .. }) => {
                assert_eq!(registry, "widget");
                assert_eq!(available, "one, two");
            }
            _ => panic!("expected unknown strategy"),
        }
    }
}
