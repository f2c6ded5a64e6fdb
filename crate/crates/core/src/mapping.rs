//! Label remapping tables for folding auxiliary datasets into the target
//! label space. Source classes without an entry map to [`IGNORE`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::labelmap::IGNORE;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMapping {
    source_class_count: usize,
    entries: Vec<Option<u8>>,
}

impl ClassMapping {
    pub fn new(source_class_count: usize) -> Result<Self> {
        if source_class_count == 0 || source_class_count > usize::from(IGNORE) {
            return Err(Error::validation(format!(
                "source class count must be in [1, 255], got {source_class_count}"
            )));
        }
        Ok(Self {
            source_class_count,
            entries: vec![None; source_class_count],
        })
    }

    pub fn identity(class_count: usize) -> Result<Self> {
        let mut m = Self::new(class_count)?;
        for c in 0..class_count {
            m.entries[c] = Some(c as u8);
        }
        Ok(m)
    }

    /// Sets `source -> target`. A target of 255 is stored as an explicit
    /// ignore and behaves like a missing entry.
    pub fn insert(&mut self, source: u8, target: u8) -> Result<()> {
        let slot = self.entries.get_mut(usize::from(source)).ok_or_else(|| {
            Error::validation(format!(
                "source class {source} outside [0, {})",
                self.source_class_count
            ))
        })?;
        *slot = (target != IGNORE).then_some(target);
        Ok(())
    }

    pub fn source_class_count(&self) -> usize {
        self.source_class_count
    }

    /// Target for a source label; 255 stays 255, unmapped classes become 255.
    pub fn get(&self, source: u8) -> Option<u8> {
        if source == IGNORE {
            return Some(IGNORE);
        }
        self.entries
            .get(usize::from(source))
            .map(|t| t.unwrap_or(IGNORE))
    }

    /// Mapping equivalent to applying `self` and then `then`.
    pub fn compose(&self, then: &ClassMapping) -> Result<ClassMapping> {
        let mut out = ClassMapping::new(self.source_class_count)?;
        for (s, t) in self.entries.iter().enumerate() {
            if let Some(t) = t {
                let next = then.get(*t).ok_or_else(|| {
                    Error::validation(format!(
                        "intermediate class {t} outside the second mapping's source range"
                    ))
                })?;
                out.insert(s as u8, next)?;
            }
        }
        Ok(out)
    }

    /// Parses line-oriented `source target` pairs. Blank lines and `#`
    /// comments are skipped. Without `source_class_count` the range is
    /// inferred as one past the largest source id.
    pub fn parse(text: &str, source_class_count: Option<usize>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<_> = line.split_whitespace().collect();
            let parsed = match fields.as_slice() {
                [s, t] => s.parse::<u8>().ok().zip(t.parse::<u8>().ok()),
                _ => None,
            };
            let (s, t) = parsed.ok_or_else(|| {
                Error::format(format!(
                    "mapping line {}: expected `source target` with ids in [0, 255], got {line:?}",
                    lineno + 1
                ))
            })?;
            if s == IGNORE {
                return Err(Error::format(format!(
                    "mapping line {}: source id 255 is reserved for ignore",
                    lineno + 1
                )));
            }
            pairs.push((s, t));
        }
        let count = source_class_count
            .unwrap_or_else(|| pairs.iter().map(|(s, _)| usize::from(*s) + 1).max().unwrap_or(1));
        let mut m = ClassMapping::new(count)?;
        for (s, t) in pairs {
            m.insert(s, t)?;
        }
        Ok(m)
    }

    pub fn load(path: &Path, source_class_count: Option<usize>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, source_class_count)
    }
}
