//! JSONL and file helpers.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Parse every non-blank line of a JSONL file. Errors name the line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn append_jsonl<T: Serialize>(path: &Path, item: &T) -> io::Result<()> {
    let mut line = serde_json::to_vec(item)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.flush()
}

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// File-system-safe rendering of an arbitrary id. Ids that need rewriting
/// get a hash suffix so distinct ids keep distinct names.
pub fn safe_file_stem(id: &str) -> String {
    let s: String =
        id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect();
    if s == id && !s.is_empty() && !s.starts_with('.') {
        s
    } else {
        format!("_{s}-{:08x}", crate::stable_hash(&[id.as_bytes()]) as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl(&p, &[1, 2]).unwrap();
        append_jsonl(&p, &3).unwrap();
        assert_eq!(read_jsonl::<i32>(&p).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn bad_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "1\n\nnope\n").unwrap();
        let err = read_jsonl::<i32>(&p).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    #[test]
    fn file_stems() {
        assert_eq!(safe_file_stem("abc-1_2.x"), "abc-1_2.x");
        assert!(safe_file_stem("a/b c").starts_with("_a_b_c-"));
        assert_ne!(safe_file_stem("a/b"), safe_file_stem("a_b"));
        assert_ne!(safe_file_stem("a/b"), safe_file_stem("a b"));
        assert!(safe_file_stem("../x").starts_with("_.._x-"));
        assert!(safe_file_stem("").starts_with('_'));
    }
}
