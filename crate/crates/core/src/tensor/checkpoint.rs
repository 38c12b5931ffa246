//! Plain-text parameter container.
//!
//! ```text
//! mta-params 1
//! <name> <rank> <dim>...
//! <value> <value> ...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces every bit.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "mta-params";
const VERSION: u32 = 1;

impl ParamSet {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC} {VERSION}")?;
        for id in self.ids() {
            let t = self.value(id);
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(w, "{} {} {}", self.name(id), t.shape().len(), dims.join(" "))?;
            let vals: Vec<String> = t.data().iter().map(f64::to_string).collect();
            writeln!(w, "{}", vals.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Parse("empty checkpoint".into()))?;
        match header.split_whitespace().collect::<Vec<_>>()[..] {
            [MAGIC, v] if v == VERSION.to_string() => {}
            [MAGIC, v] => return Err(Error::Version(format!("checkpoint version {v}, expected {VERSION}"))),
            _ => return Err(Error::Parse(format!("bad checkpoint header {header:?}"))),
        }
        let mut set = ParamSet::new();
        while let Some(meta) = lines.next().transpose()? {
            if meta.trim().is_empty() {
                continue;
            }
            let mut it = meta.split_whitespace();
            let name = it.next().ok_or_else(|| Error::Parse("missing tensor name".into()))?;
            let parse_usize = |s: Option<&str>| -> Result<usize> {
                s.and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad tensor header {meta:?}")))
            };
            let rank = parse_usize(it.next())?;
            let shape = (0..rank).map(|_| parse_usize(it.next())).collect::<Result<Vec<_>>>()?;
            let body = lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Parse(format!("missing values for {name}")))?;
            let data = body
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{name}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            set.add(name, Tensor::new(shape, data)?)?;
        }
        Ok(set)
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
