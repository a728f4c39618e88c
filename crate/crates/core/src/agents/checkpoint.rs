//! Plain-text tensor archive for parameter checkpoints.
//!
//! Format, line by line:
//!
//! ```text
//! oransim-checkpoint v1
//! agent <kind>
//! tensor <name> <dim0> [<dim1> ...]
//! <row-major values, space separated, one line>
//! ...
//! end
//! ```
//!
//! Values are written with shortest-round-trip formatting, so a load followed
//! by a save reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use crate::error::{Result, SimError};

/// One named tensor from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub(crate) fn write_header(w: &mut dyn Write, agent: &str) -> io::Result<()> {
    writeln!(w, "oransim-checkpoint v1")?;
    writeln!(w, "agent {agent}")
}

pub(crate) fn write_tensor(
    w: &mut dyn Write,
    name: &str,
    shape: &[usize],
    values: &[f64],
) -> io::Result<()> {
    write!(w, "tensor {name}")?;
    for d in shape {
        write!(w, " {d}")?;
    }
    writeln!(w)?;
    let mut first = true;
    for v in values {
        if !first {
            write!(w, " ")?;
        }
        write!(w, "{v:?}")?;
        first = false;
    }
    writeln!(w)
}

pub(crate) fn write_footer(w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "end")
}

/// Parse a checkpoint into a name -> tensor map.
pub fn read_checkpoint(r: impl io::Read) -> Result<(String, BTreeMap<String, TensorData>)> {
    let reader = io::BufReader::new(r);
    let mut lines = reader.lines();
    let bad = |msg: &str| SimError::parse("checkpoint", msg);

    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| bad("empty file"))?;
    if header.trim() != "oransim-checkpoint v1" {
        return Err(bad(&format!("unexpected header '{header}'")));
    }
    let agent_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| bad("missing agent line"))?;
    let agent = agent_line
        .strip_prefix("agent ")
        .ok_or_else(|| bad("malformed agent line"))?
        .to_string();

    let mut tensors = BTreeMap::new();
    loop {
        let line = lines
            .next()
            .transpose()?
            .ok_or_else(|| bad("missing end marker"))?;
        let line = line.trim();
        if line == "end" {
            break;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(bad(&format!("expected tensor line, got '{line}'")));
        }
        let name = parts
            .next()
            .ok_or_else(|| bad("tensor line without a name"))?
            .to_string();
        let shape: Vec<usize> = parts
            .map(|d| d.parse().map_err(|_| bad(&format!("bad dimension in '{line}'"))))
            .collect::<Result<_>>()?;
        let expected: usize = shape.iter().product();
        let data_line = lines
            .next()
            .transpose()?
            .ok_or_else(|| bad(&format!("tensor '{name}' missing data line")))?;
        let values: Vec<f64> = data_line
            .split_whitespace()
            .map(|v| {
                v.parse()
                    .map_err(|_| bad(&format!("bad value '{v}' in tensor '{name}'")))
            })
            .collect::<Result<_>>()?;
        if values.len() != expected {
            return Err(bad(&format!(
                "tensor '{name}': expected {expected} values, got {}",
                values.len()
            )));
        }
        tensors.insert(name, TensorData { shape, values });
    }
    Ok((agent, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let mut buf = Vec::new();
        write_header(&mut buf, "td3").unwrap();
        let values = vec![0.1, -2.5e-17, 3.0, f64::MIN_POSITIVE];
        write_tensor(&mut buf, "actor.layer0.w", &[2, 2], &values).unwrap();
        write_footer(&mut buf).unwrap();

        let (agent, tensors) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(agent, "td3");
        let t = &tensors["actor.layer0.w"];
        assert_eq!(t.shape, vec![2, 2]);
        for (a, b) in t.values.iter().zip(&values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(read_checkpoint(&b""[..]).is_err());
        assert!(read_checkpoint(&b"oransim-checkpoint v1\nagent x\ntensor t 3\n1.0 2.0\nend\n"[..])
            .is_err());
        assert!(read_checkpoint(&b"wrong\n"[..]).is_err());
    }
}
