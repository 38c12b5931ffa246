use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Sequence, TouchPoint, CHANNEL_FIELD, HOUR_FIELD};
use crate::error::{Error, Result};

const HEADER: &str = "# mta-vocab 1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldVocab {
    pub name: String,
    /// Row for values not seen often enough during `build_vocab`.
    pub unknown: usize,
    pub values: BTreeMap<String, usize>,
}

/// Dense embedding-row indices for every (field, value), disjoint across
/// fields. Each field's block starts with its unknown slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureVocab {
    fields: Vec<FieldVocab>,
    size: usize,
}

impl FeatureVocab {
    pub fn fields(&self) -> &[FieldVocab] {
        &self.fields
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    /// Total embedding rows.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn index(&self, field: &str, value: &str) -> Option<usize> {
        let f = self.fields.iter().find(|f| f.name == field)?;
        Some(f.values.get(value).copied().unwrap_or(f.unknown))
    }

    /// One row index per vocabulary field, in field order. Fields missing
    /// from the touch point map to their unknown slot.
    pub fn encode(&self, tp: &TouchPoint) -> Vec<usize> {
        self.fields
            .iter()
            .map(|f| {
                tp.feature(&f.name)
                    .and_then(|v| f.values.get(v).copied())
                    .unwrap_or(f.unknown)
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{HEADER}")?;
        for f in &self.fields {
            writeln!(w, "unk\t{}\t{}", escape(&f.name), f.unknown)?;
            for (v, i) in &f.values {
                writeln!(w, "val\t{}\t{}\t{}", escape(&f.name), i, escape(v))?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        match lines.next().transpose()? {
            Some(h) if h == HEADER => {}
            other => return Err(Error::Parse(format!("bad vocab header {other:?}"))),
        }
        let mut fields: Vec<FieldVocab> = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("vocab line {}: {line:?}", n + 2));
            let parts: Vec<&str> = line.split('\t').collect();
            match parts[..] {
                ["unk", name, idx] => fields.push(FieldVocab {
                    name: unescape(name),
                    unknown: idx.parse().map_err(|_| bad())?,
                    values: BTreeMap::new(),
                }),
                ["val", name, idx, value] => {
                    let f = fields.last_mut().filter(|f| f.name == unescape(name)).ok_or_else(bad)?;
                    f.values.insert(unescape(value), idx.parse().map_err(|_| bad())?);
                }
                _ => return Err(bad()),
            }
        }
        let size = fields.iter().map(|f| f.values.len() + 1).sum();
        let mut seen = vec![false; size];
        for i in fields
            .iter()
            .flat_map(|f| std::iter::once(f.unknown).chain(f.values.values().copied()))
        {
            if i >= size || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Parse(format!("vocab indices are not dense: {i}")));
            }
        }
        Ok(FeatureVocab { fields, size })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Indexes every value seen at least `min_count` times. Fields are ordered
/// channel, hour, then the remaining fields by first appearance; values are
/// indexed in lexicographic order after the field's unknown slot.
pub fn build_vocab(seqs: &[Sequence], min_count: usize) -> Result<FeatureVocab> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut order: Vec<String> = vec![CHANNEL_FIELD.into(), HOUR_FIELD.into()];
    let mut counts: HashMap<String, BTreeMap<String, usize>> = HashMap::new();
    for tp in seqs.iter().flat_map(|s| &s.points) {
        for (field, value) in &tp.features {
            if !order.contains(field) {
                order.push(field.clone());
            }
            *counts
                .entry(field.clone())
                .or_default()
                .entry(value.clone())
                .or_default() += 1;
        }
    }
    let mut next = 0;
    let fields = order
        .into_iter()
        .map(|name| {
            let unknown = next;
            next += 1;
            let values = counts
                .remove(&name)
                .unwrap_or_default()
                .into_iter()
                .filter(|(_, c)| *c >= min_count)
                .map(|(v, _)| {
                    next += 1;
                    (v, next - 1)
                })
                .collect();
            FieldVocab { name, unknown, values }
        })
        .collect();
    Ok(FeatureVocab { fields, size: next })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_with(values: &[&str]) -> Sequence {
        Sequence {
            id: "s".into(),
            user_id: "u".into(),
            points: values
                .iter()
                .map(|v| TouchPoint::new("c", 0, false, 0.0, vec![("f".into(), v.to_string())]))
                .collect(),
            converted: false,
            conversion_time: None,
        }
    }

    fn field<'a>(v: &'a FeatureVocab, name: &str) -> &'a FieldVocab {
        v.fields().iter().find(|f| f.name == name).unwrap()
    }

    #[test]
    fn counts_values_and_unknown_slot() {
        let v = build_vocab(&[seq_with(&["A", "A", "B"])], 1).unwrap();
        let f = field(&v, "f");
        assert_eq!(f.values.len(), 2);
        assert_ne!(v.index("f", "A"), v.index("f", "B"));
        assert_eq!(v.index("f", "Z"), Some(f.unknown));
        // channel: unk + "c"; hour: unk + "0"; f: unk + A + B
        assert_eq!(v.size(), 7);
    }

    #[test]
    fn min_count_sends_rare_values_to_unknown() {
        let v = build_vocab(&[seq_with(&["A", "A", "B"])], 2).unwrap();
        let f = field(&v, "f");
        assert_eq!(f.values.keys().collect::<Vec<_>>(), ["A"]);
        assert_eq!(v.index("f", "B"), Some(f.unknown));
    }

    #[test]
    fn empty_input_has_only_unknown_slots() {
        let v = build_vocab(&[], 1).unwrap();
        assert_eq!(v.size(), v.num_fields());
        assert!(v.fields().iter().all(|f| f.values.is_empty()));
    }

    #[test]
    fn indices_dense_and_disjoint() {
        let v = build_vocab(&[seq_with(&["x", "y"]), seq_with(&["z"])], 1).unwrap();
        let mut all: Vec<usize> = v
            .fields()
            .iter()
            .flat_map(|f| std::iter::once(f.unknown).chain(f.values.values().copied()))
            .collect();
        all.sort();
        assert_eq!(all, (0..v.size()).collect::<Vec<_>>());
    }

    #[test]
    fn save_load_exact() {
        let mut s = seq_with(&["tab\there", "back\\slash", ""]);
        s.points[0].features.push(("g".into(), "new\nline".into()));
        let v = build_vocab(&[s], 1).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(FeatureVocab::read_from(&buf[..]).unwrap(), v);
    }

    #[test]
    fn encode_uses_field_order() {
        let s = seq_with(&["A"]);
        let v = build_vocab(std::slice::from_ref(&s), 1).unwrap();
        let idx = v.encode(&s.points[0]);
        assert_eq!(idx.len(), 3);
        assert_eq!(idx[2], v.index("f", "A").unwrap());
    }
}
