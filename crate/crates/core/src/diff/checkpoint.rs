//! Parameter checkpoints.
//!
//! ```text
//! LTM-CKPT v1
//! <name> <len> <offset>      one line per tensor, offset in values
//! END
//! <little-endian f64 data>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &str = "LTM-CKPT v1";

pub fn write_checkpoint<T: Real, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    let mut offset = 0usize;
    for (name, values) in store.iter() {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Format(format!("parameter name `{name}` is empty or has whitespace")));
        }
        writeln!(w, "{name} {} {offset}", values.len())?;
        offset += values.len();
    }
    writeln!(w, "END")?;
    for (_, values) in store.iter() {
        for v in values {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(r: R) -> Result<ParamStore<T>> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic `{}`", line.trim_end())));
    }
    let mut entries = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("checkpoint header has no END line".into()));
        }
        let l = line.trim_end();
        if l == "END" {
            break;
        }
        let fields: Vec<&str> = l.split(' ').collect();
        let [name, len, offset] = fields[..] else {
            return Err(Error::Format(format!("bad checkpoint header line `{l}`")));
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("`{s}`: {e}")));
        entries.push((name.to_string(), parse(len)?, parse(offset)?));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() % 8 != 0 {
        return Err(Error::Format("checkpoint payload is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut store = ParamStore::new();
    for (name, len, offset) in entries {
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= values.len())
            .ok_or_else(|| Error::Format(format!("tensor `{name}` runs past the payload")))?;
        store.add(name, values[offset..end].iter().map(|&v| T::lit(v)).collect())?;
    }
    Ok(store)
}

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(store, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ParamStore<T>> {
    read_checkpoint(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = ParamStore::<f64>::new();
        s.add("conv0.kernel", vec![0.1, -2.5e-300, f64::MIN_POSITIVE]).unwrap();
        s.add("template", vec![1.0; 5]).unwrap();
        s.add("empty", vec![]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&s, &mut buf).unwrap();
        let back: ParamStore<f64> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_checkpoint::<f64, _>(&b"NOPE\nEND\n"[..]).is_err());
        assert!(read_checkpoint::<f64, _>(&b"LTM-CKPT v1\nw 4 0\nEND\n\0\0\0\0\0\0\0\0"[..]).is_err());
        let mut s = ParamStore::<f64>::new();
        s.add("bad name", vec![1.0]).unwrap();
        assert!(write_checkpoint(&s, Vec::new()).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(tensors in proptest::collection::vec(proptest::collection::vec(any::<f64>(), 0..20), 0..6)) {
            let mut s = ParamStore::<f64>::new();
            for (i, t) in tensors.iter().enumerate() {
                s.add(format!("p{i}"), t.clone()).unwrap();
            }
            let mut buf = Vec::new();
            write_checkpoint(&s, &mut buf).unwrap();
            let back: ParamStore<f64> = read_checkpoint(&buf[..]).unwrap();
            for (a, b) in back.iter().zip(s.iter()) {
                prop_assert_eq!(a.0, b.0);
                let bits_a: Vec<u64> = a.1.iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.1.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
