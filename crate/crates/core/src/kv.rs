//! Line-oriented `key = value` text used by every manifest in the project.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique and
//! keep their file order.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for KvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for KvError {}

fn err(line: usize, message: impl Into<String>) -> KvError {
    KvError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut doc = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(err(n + 1, format!("expected `key = value`, got {line:?}")));
            };
            let key = k.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
                return Err(err(n + 1, format!("invalid key {key:?}")));
            }
            if doc.get(key).is_some() {
                return Err(err(n + 1, format!("duplicate key {key:?}")));
            }
            doc.entries.push((key.to_string(), v.trim().to_string()));
        }
        Ok(doc)
    }

    /// Appends or replaces `key`.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| err(0, format!("missing key {key:?}")))
    }

    /// Parses `key` as `T`; missing keys are errors.
    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T, KvError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e: T::Err| err(0, format!("bad value {raw:?} for {key:?}: {e}")))
    }

    /// Parses `key` as `T` if present.
    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.parse_value(key).map(Some),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        let i = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(i).1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: &KvDoc) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }
}

impl fmt::Display for KvDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Floats are written with Rust's shortest round-trip formatting.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_display() {
        let mut d = KvDoc::new();
        d.set("a", 1);
        d.set("model.lambda_temporal", fmt_f64(0.3));
        d.set("name", "two words");
        let back = KvDoc::parse(&d.to_string()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.parse_value::<f64>("model.lambda_temporal").unwrap(), 0.3);
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let d = KvDoc::parse("# header\n\n  x = 3  \n").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.get("x"), Some("3"));
    }

    #[test]
    fn value_may_contain_equals() {
        let d = KvDoc::parse("cmd = a=b").unwrap();
        assert_eq!(d.get("cmd"), Some("a=b"));
    }

    #[test]
    fn reports_line_numbers() {
        let e = KvDoc::parse("a = 1\nnope\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = KvDoc::parse("a = 1\na = 2\n").unwrap_err();
        assert!(e.message.contains("duplicate"));
        assert!(KvDoc::parse("bad key = 1").is_err());
        assert!(KvDoc::parse(" = 1").is_err());
    }

    #[test]
    fn typed_access() {
        let d = KvDoc::parse("n = 12\nf = x").unwrap();
        assert_eq!(d.parse_value::<usize>("n").unwrap(), 12);
        assert!(d.parse_value::<usize>("f").is_err());
        assert!(d.parse_value::<usize>("missing").is_err());
        assert_eq!(d.parse_opt::<usize>("missing").unwrap(), None);
    }
}
