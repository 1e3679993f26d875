//! Plain-text checkpoint container shared by every model in the repo.
//!
//! Layout: a `SCKPT 1` header line, then for each parameter one metadata
//! line `name <name> shape <d1 d2 ...> trainable <0|1>` followed by one line
//! of whitespace-separated decimal values (17 significant digits,
//! row-major). 17 digits round-trip an f64 exactly, so save followed by
//! load reproduces every value bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &str = "SCKPT 1";

pub fn to_string(set: &ParamSet) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for p in set.iter() {
        out.push_str("name ");
        out.push_str(&p.name);
        out.push_str(" shape");
        for d in p.value.shape() {
            let _ = write!(out, " {d}");
        }
        let _ = write!(out, " trainable {}", if p.trainable { 1 } else { 0 });
        out.push('\n');
        let mut first = true;
        for v in p.value.data() {
            if !first {
                out.push(' ');
            }
            let _ = write!(out, "{v:.16e}");
            first = false;
        }
        out.push('\n');
    }
    out
}

pub fn save(set: &ParamSet, path: &Path) -> Result<()> {
    fs::write(path, to_string(set))?;
    Ok(())
}

pub fn from_string(text: &str) -> Result<ParamSet> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim_end() == MAGIC => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "bad header: expected '{MAGIC}', got {other:?}"
            )))
        }
    }
    let mut set = ParamSet::new();
    while let Some(meta) = lines.next() {
        if meta.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = meta.split_whitespace().collect();
        if tokens.len() < 5 || tokens[0] != "name" {
            return Err(Error::Checkpoint(format!("bad metadata line: '{meta}'")));
        }
        let name = tokens[1];
        let shape_pos = tokens
            .iter()
            .position(|t| *t == "shape")
            .ok_or_else(|| Error::Checkpoint(format!("missing shape in '{meta}'")))?;
        let trainable_pos = tokens
            .iter()
            .position(|t| *t == "trainable")
            .ok_or_else(|| Error::Checkpoint(format!("missing trainable in '{meta}'")))?;
        let shape: Vec<usize> = tokens[shape_pos + 1..trainable_pos]
            .iter()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad shape entry '{t}' in '{meta}'")))
            })
            .collect::<Result<_>>()?;
        let trainable = match tokens.get(trainable_pos + 1) {
            Some(&"1") => true,
            Some(&"0") => false,
            other => {
                return Err(Error::Checkpoint(format!("bad trainable flag {other:?} in '{meta}'")))
            }
        };
        let numel: usize = shape.iter().product();
        let data_line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("missing values for '{name}'")))?;
        let data: Vec<f64> = data_line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Checkpoint(format!("bad value '{t}' for '{name}'")))
            })
            .collect::<Result<_>>()?;
        if data.len() != numel {
            return Err(Error::Checkpoint(format!(
                "'{name}': {} values for shape {shape:?}",
                data.len()
            )));
        }
        set.add(name.to_string(), Tensor::new(shape, data), trainable);
    }
    Ok(set)
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_string(&text)
}

/// FNV-1a over file bytes; used to chain checkpoints (a side checkpoint
/// records the hash of the base checkpoint and vocabulary it was trained
/// against, and loading refuses to mix mismatched artifacts).
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(bytes_hash(&bytes))
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng::new(17);
        let mut set = ParamSet::new();
        set.add("w.first", Tensor::init_uniform(3, 5, 5, &mut rng), true);
        set.add("w.second", Tensor::init_uniform(1, 1, 1, &mut rng), false);
        set.add("bias", Tensor::new(vec![1, 2], vec![1.0 / 3.0, -2.7182818284590451e-40]), true);

        let text = to_string(&set);
        let loaded = from_string(&text).unwrap();
        assert_eq!(loaded.len(), set.len());
        for (a, b) in set.iter().zip(loaded.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.trainable, b.trainable);
            assert_eq!(a.value.shape(), b.value.shape());
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // Serialization itself is deterministic.
        assert_eq!(text, to_string(&loaded));
    }

    #[test]
    fn rejects_bad_header() {
        assert!(from_string("SCKPT 2\n").is_err());
        assert!(from_string("").is_err());
    }

    #[test]
    fn rejects_wrong_value_count() {
        let text = "SCKPT 1\nname w shape 2 2 trainable 1\n1.0 2.0 3.0\n";
        assert!(from_string(text).is_err());
    }
}
