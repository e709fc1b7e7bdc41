use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, Result};

/// Character n-gram vectors keyed by the n-gram string.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

impl MorphTable {
    pub fn new(dim: usize) -> Self {
        MorphTable {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let key = key.into();
        if key.is_empty() || key.chars().any(char::is_whitespace) {
            return Err(DataError::Validation(format!("n-gram key {key:?} is empty or has whitespace")));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Validation(format!("non-finite value for {key:?}")));
        }
        if vector.len() != self.dim {
            return Err(DataError::Validation(format!(
                "vector for {key:?} has {} dims, table has {}",
                vector.len(),
                self.dim
            )));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

pub fn read_vec_table(path: impl AsRef<Path>) -> Result<MorphTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError::format(path, "missing `<count> <dim>` header"))?;
    let header: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| DataError::format(path, format!("bad header field {s:?}")))
    };
    if header.len() != 2 {
        return Err(DataError::format(path, "header must be `<count> <dim>`"));
    }
    let (count, dim) = (parse_usize(header[0])?, parse_usize(header[1])?);
    let mut table = MorphTable::new(dim);
    for (lineno, line) in lines {
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let key = fields
            .next()
            .ok_or_else(|| DataError::format(path, format!("line {}: empty row", lineno + 1)))?;
        let vector = fields
            .map(|f| {
                f.parse::<f32>().map_err(|_| {
                    DataError::format(path, format!("line {}: unparseable float {f:?}", lineno + 1))
                })
            })
            .collect::<Result<Vec<f32>>>()?;
        if vector.len() != dim {
            return Err(DataError::format(
                path,
                format!("line {}: row has {} of {dim} dims", lineno + 1, vector.len()),
            ));
        }
        if table.entries.contains_key(key) {
            return Err(DataError::format(path, format!("duplicate key {key:?}")));
        }
        table
            .insert(key, vector)
            .map_err(|e| DataError::format(path, format!("line {}: {e}", lineno + 1)))?;
    }
    if table.len() != count {
        return Err(DataError::format(
            path,
            format!("header declares {count} rows, found {}", table.len()),
        ));
    }
    Ok(table)
}

pub fn write_vec_table(table: &MorphTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("{} {}\n", table.len(), table.dim);
    for (k, v) in table.iter() {
        out.push_str(k);
        for x in v {
            // `{}` prints the shortest representation that parses back exactly.
            write!(out, " {x}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}
