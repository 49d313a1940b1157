//! Shared plumbing: atomic file writes, JSONL IO, seed derivation, and the
//! approximate token counter used by corpus statistics.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Write `bytes` to `path` atomically (write to a temp file in the same
/// directory, then rename over the target).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Serialize `items` as JSON Lines and write them atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Read a JSONL file into typed records. Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> std::io::Result<Vec<T>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}:{}: {}", path.display(), lineno + 1, e),
            )
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Count lines holding a JSON object in a JSONL file.
pub fn count_jsonl_lines(path: &Path) -> std::io::Result<usize> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut n = 0;
    for line in reader.lines() {
        if !line?.trim().is_empty() {
            n += 1;
        }
    }
    Ok(n)
}

/// Derive a child seed from a base seed and a stream label.
///
/// SHA-256 based so the derivation is stable across platforms and releases,
/// unlike `std`'s `DefaultHasher`.
pub fn derive_seed(base: u64, stream: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Map a string to a stable bucket index in `[0, n)`.
pub fn stable_bucket(s: &str, n: usize) -> usize {
    assert!(n > 0, "bucket count must be positive");
    let digest = Sha256::digest(s.as_bytes());
    let x = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (x % n as u64) as usize
}

/// Whitespace-delimited token count. An approximation of LLM tokenization,
/// used only for corpus statistics; labeled approximate in reports.
pub fn approx_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Row {
        k: String,
        v: u64,
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let rows = vec![
            Row { k: "a".into(), v: 1 },
            Row { k: "b".into(), v: 2 },
        ];
        write_jsonl(&path, &rows).unwrap();
        let back: Vec<Row> = read_jsonl(&path).unwrap();
        assert_eq!(rows, back);
        assert_eq!(count_jsonl_lines(&path).unwrap(), 2);
    }

    #[test]
    fn derive_seed_is_stable_and_stream_sensitive() {
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
        assert_ne!(derive_seed(7, "x"), derive_seed(7, "y"));
        assert_ne!(derive_seed(7, "x"), derive_seed(8, "x"));
    }

    #[test]
    fn stable_bucket_in_range() {
        for s in ["", "a", "32", "answer text"] {
            assert!(stable_bucket(s, 10) < 10);
        }
        assert_eq!(stable_bucket("fixed", 16), stable_bucket("fixed", 16));
    }

    #[test]
    fn token_count_is_whitespace_delimited() {
        assert_eq!(approx_token_count(""), 0);
        assert_eq!(approx_token_count("one two  three\nfour"), 4);
    }
}
