//! Checkpoint container: a text header listing tensors, then one binary
//! block of their values.
//!
//! Layout:
//! ```text
//! CFKP1\n
//! <name> <rows> <cols>\n      (one line per tensor, in header order)
//! \n                          (blank line terminates the header)
//! <row-major little-endian IEEE-754 f32 values, in header order>
//! ```
//!
//! Values are stored as `f32`; loading promotes them to `f64` exactly, so
//! save -> load -> save reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoupletError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor2D;

pub const CHECKPOINT_MAGIC: &str = "CFKP1";

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_checkpoint(params, &mut w)
}

pub fn write_checkpoint<W: Write>(params: &ParamSet, w: &mut W) -> Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    for (name, e) in params.iter() {
        if name.contains(char::is_whitespace) || name.is_empty() {
            return Err(CoupletError::Argument(format!("tensor name `{name}` is not storable")));
        }
        writeln!(w, "{} {} {}", name, e.value.rows(), e.value.cols())?;
    }
    writeln!(w)?;
    for (_, e) in params.iter() {
        for &v in e.value.values() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let file = File::open(path)
        .map_err(|e| CoupletError::Io(format!("cannot open checkpoint {}: {e}", path.display())))?;
    read_checkpoint(&mut BufReader::new(file))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ParamSet> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;

    // Header is ASCII lines up to the first blank line.
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut header: Vec<(String, usize, usize)> = Vec::new();
    let mut saw_magic = false;
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(CoupletError::Format { line: line_no + 1, msg: "unterminated header".into() })?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl])
            .map_err(|_| CoupletError::Format { line: line_no + 1, msg: "non-UTF-8 header".into() })?;
        pos += nl + 1;
        line_no += 1;
        if !saw_magic {
            if line != CHECKPOINT_MAGIC {
                return Err(CoupletError::Format {
                    line: line_no,
                    msg: format!("bad magic `{line}`, expected `{CHECKPOINT_MAGIC}`"),
                });
            }
            saw_magic = true;
            continue;
        }
        if line.is_empty() {
            break;
        }
        let mut it = line.split(' ');
        let name = it.next().unwrap_or_default();
        let rows = it.next().and_then(|s| s.parse::<usize>().ok());
        let cols = it.next().and_then(|s| s.parse::<usize>().ok());
        match (rows, cols, it.next()) {
            (Some(r), Some(c), None) if !name.is_empty() => header.push((name.to_string(), r, c)),
            _ => {
                return Err(CoupletError::Format {
                    line: line_no,
                    msg: format!("expected `name rows cols`, got `{line}`"),
                })
            }
        }
    }

    let total: usize = header.iter().map(|(_, r, c)| r * c).sum();
    let body = &bytes[pos..];
    if body.len() != total * 4 {
        return Err(CoupletError::Format {
            line: line_no,
            msg: format!("binary block has {} bytes, header implies {}", body.len(), total * 4),
        });
    }

    let mut params = ParamSet::new();
    let mut off = 0usize;
    for (name, rows, cols) in header {
        let n = rows * cols;
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let b = [body[off + 4 * i], body[off + 4 * i + 1], body[off + 4 * i + 2], body[off + 4 * i + 3]];
            values.push(f32::from_le_bytes(b) as f64);
        }
        off += 4 * n;
        if params.contains(&name) {
            return Err(CoupletError::Format { line: 0, msg: format!("duplicate tensor `{name}`") });
        }
        params.insert(&name, Tensor2D::from_values(rows, cols, values)?);
    }
    Ok(params)
}

/// FNV-1a over the serialized checkpoint; used as a cheap content identifier
/// for health reporting.
pub fn checkpoint_fingerprint(params: &ParamSet) -> Result<String> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in buf {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}
