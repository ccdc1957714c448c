//! Flat `key = value` configuration text. Blank lines and `#` comments are
//! ignored; keys must be unique.

use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("unknown key `{0}`")]
    Unknown(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("missing key `{0}`")]
    Missing(String),
}

#[derive(Debug, Default, Clone)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            if entries.insert(k.to_owned(), v.trim().to_owned()).is_some() {
                return Err(KvError::Duplicate(k.to_owned()));
            }
        }
        Ok(Self { entries })
    }

    /// Fails on any key outside `allowed`.
    pub fn restrict(&self, allowed: &[&str]) -> Result<(), KvError> {
        match self.entries.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(KvError::Unknown(k.clone())),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|_| KvError::Value {
                    key: key.to_owned(),
                    value: v.to_owned(),
                })
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, KvError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.get(key)?.ok_or_else(|| KvError::Missing(key.to_owned()))
    }

    /// Comma-separated list of reals.
    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>, KvError> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim().parse().map_err(|_| KvError::Value {
                            key: key.to_owned(),
                            value: v.to_owned(),
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>, KvError> {
        self.raw(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(KvError::Value {
                    key: key.to_owned(),
                    value: v.to_owned(),
                }),
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let kv = KvMap::parse("# header\nlr = 0.01\nbeta=1, 2,3 # trailing\n\nipw = on\n").unwrap();
        assert_eq!(kv.get::<f64>("lr").unwrap(), Some(0.01));
        assert_eq!(kv.get_list("beta").unwrap(), Some(vec![1.0, 2.0, 3.0]));
        assert_eq!(kv.get_bool("ipw").unwrap(), Some(true));
        assert_eq!(kv.get::<usize>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(KvMap::parse("no equals"), Err(KvError::Syntax { line: 1 })));
        assert!(matches!(KvMap::parse("a=1\na=2"), Err(KvError::Duplicate(_))));
        let kv = KvMap::parse("lr = fast").unwrap();
        assert!(matches!(kv.get::<f64>("lr"), Err(KvError::Value { .. })));
        assert!(matches!(kv.restrict(&["seed"]), Err(KvError::Unknown(k)) if k == "lr"));
    }
}
