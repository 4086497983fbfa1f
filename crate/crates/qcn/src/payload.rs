//! Micro-object attributes. A payload is the set of named values carried by
//! a token as it circulates: transported volume, accumulated fuel burn,
//! composition fractions, anything the scenario tracks.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::num::Scalar;

/// Named real-valued attributes of the micro object occupying a cell.
///
/// Attribute order is always the lexicographic key order, so serialized
/// payloads are deterministic.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent, bound = "")]
pub struct Payload<T: Scalar>(BTreeMap<String, T>);

impl<T: Scalar> Payload<T> {
    pub fn new() -> Self {
        Payload(BTreeMap::new())
    }

    pub fn get(&self, name: &str) -> Option<T> {
        self.0.get(name).copied()
    }

    /// Attribute value, defaulting to zero when absent.
    pub fn value(&self, name: &str) -> T {
        self.get(name).unwrap_or_else(T::zero)
    }

    pub fn set(&mut self, name: &str, value: T) {
        self.0.insert(name.to_owned(), value);
    }

    /// Add `delta` to an attribute, creating it at zero first if needed.
    pub fn add(&mut self, name: &str, delta: T) {
        let v = self.value(name) + delta;
        self.0.insert(name.to_owned(), v);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, T)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// All attribute values must be finite.
    pub fn check_finite(&self) -> Result<(), String> {
        for (name, value) in self.iter() {
            if !value.is_finite() {
                return Err(format!("payload attribute `{name}` is not finite"));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> FromIterator<(String, T)> for Payload<T> {
    fn from_iter<I: IntoIterator<Item = (String, T)>>(iter: I) -> Self {
        Payload(iter.into_iter().collect())
    }
}

impl<T: Scalar> fmt::Display for Payload<T> {
    /// `name=value;name=value` in key order; `-` when empty.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "-");
        }
        let mut first = true;
        for (name, value) in self.iter() {
            if !first {
                write!(f, ";")?;
            }
            write!(f, "{name}={value}")?;
            first = false;
        }
        Ok(())
    }
}
