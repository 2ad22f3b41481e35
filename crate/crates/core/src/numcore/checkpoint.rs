//! Text checkpoint format for parameter vectors.
//!
//! ```text
//! gasdro-params v1
//! meta <key> <value>          (zero or more)
//! segment <name> <d0>x<d1>...  (one per segment, in order)
//! values <count>
//! <value>                      (one per line, shortest round-trip repr)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::params::ParamVector;
use crate::error::{Error, Result};

pub const HEADER: &str = "gasdro-params v1";

/// Parameters together with free-form string metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn new(params: ParamVector) -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            params,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::config(format!("checkpoint lacks `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::config(format!("checkpoint `{key}` = {raw:?} is malformed")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for seg in self.params.segments() {
            let dims: Vec<String> = seg.shape.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("segment {} {}\n", seg.name, dims.join("x")));
        }
        out.push_str(&format!("values {}\n", self.params.len()));
        for v in self.params.values() {
            out.push_str(&format!("{v:?}\n"));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(err(1, "missing checkpoint header")),
        }
        let mut meta = BTreeMap::new();
        let mut segments: Vec<(String, Vec<usize>)> = Vec::new();
        let mut count = None;
        for (ln, line) in lines.by_ref() {
            let mut parts = line.splitn(3, ' ');
            match parts.next() {
                Some("meta") => {
                    let k = parts.next().ok_or_else(|| err(ln, "meta without key"))?;
                    meta.insert(k.to_string(), parts.next().unwrap_or("").to_string());
                }
                Some("segment") => {
                    let name = parts.next().ok_or_else(|| err(ln, "segment without name"))?;
                    let dims = parts
                        .next()
                        .ok_or_else(|| err(ln, "segment without shape"))?
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err(ln, "bad segment shape"))?;
                    segments.push((name.to_string(), dims));
                }
                Some("values") => {
                    let n = parts
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| err(ln, "bad value count"))?;
                    count = Some(n);
                    break;
                }
                _ => return Err(err(ln, "unexpected line")),
            }
        }
        let count = count.ok_or_else(|| err(0, "missing values section"))?;
        let mut values = Vec::with_capacity(count);
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            values.push(line.trim().parse::<f64>().map_err(|_| err(ln, "bad value"))?);
        }
        if values.len() != count {
            return Err(err(0, "value count does not match header"));
        }
        let mut params = ParamVector::new();
        let mut offset = 0;
        for (name, shape) in segments {
            let n: usize = shape.iter().product();
            if offset + n > values.len() {
                return Err(err(0, "segments exceed value count"));
            }
            params.push(name, shape, values[offset..offset + n].to_vec())?;
            offset += n;
        }
        if offset != values.len() {
            return Err(err(0, "segments do not cover all values"));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn text_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 0usize..40) {
            let split = split.min(vals.len() - 1);
            let mut p = ParamVector::new();
            if split > 0 {
                p.push("a", vec![split], vals[..split].to_vec()).unwrap();
            }
            p.push("b", vec![vals.len() - split], vals[split..].to_vec()).unwrap();
            let ck = Checkpoint::new(p).with_meta("kind", "test value");
            let back = Checkpoint::parse(&ck.to_text(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn rejects_truncated_values() {
        let mut p = ParamVector::new();
        p.push("a", vec![2], vec![1.0, 2.0]).unwrap();
        let text = Checkpoint::new(p).to_text();
        let cut = text.trim_end().rsplit_once('\n').unwrap().0;
        assert!(Checkpoint::parse(cut, Path::new("mem")).is_err());
    }
}
