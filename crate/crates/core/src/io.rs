//! Artifact files: delimited text and 16-bit portable graymaps, written
//! atomically (temp file in the same directory, then rename).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::other(format!("not a file path: {}", path.display()))))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// One value per line, shortest round-trip formatting.
pub fn vector_csv(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 12);
    for x in v {
        s.push_str(&format!("{x:?}\n"));
    }
    s
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    atomic_write(path, vector_csv(v).as_bytes())
}

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!("{}:{line}: {msg}", path.display()),
    ))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Rows of comma-separated numbers; blank lines and `#` comments skipped.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|_| parse_err(path, i + 1, format!("bad number '{c}'"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(parse_err(path, i + 1, format!("expected {first} columns, got {}", row.len())));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let rows = read_matrix(path)?;
    if rows.iter().any(|r| r.len() != 1) {
        return Err(parse_err(path, 0, "expected one value per line"));
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

/// Binary P5 graymap with 16-bit samples. Values are mapped linearly from
/// `[lo, hi]` to `[0, 65535]`; the range is recorded in a header comment.
pub fn pgm16(width: usize, height: usize, data: &[f64], lo: f64, hi: f64) -> Result<Vec<u8>> {
    if data.len() != width * height {
        return Err(Error::dim(format!("image {width}x{height} needs {} samples, got {}", width * height, data.len())));
    }
    let mut out = format!("P5\n# range {lo:?} {hi:?}\n{width} {height}\n65535\n").into_bytes();
    let span = hi - lo;
    for &v in data {
        let t = if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        let q = (t * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    atomic_write(path, &pgm16(width, height, data, lo, hi)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u16>,
    /// `(lo, hi)` from the header comment, when present.
    pub range: Option<(f64, f64)>,
}

pub fn read_pgm16(path: &Path) -> Result<Graymap> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let bad = |m: &str| parse_err(path, 0, m);
    let mut pos = 0;
    let mut tokens = Vec::new();
    let mut range = None;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
            let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
            let parts: Vec<_> = comment.split_whitespace().collect();
            if let ["range", lo, hi] = parts.as_slice() {
                range = lo.parse().ok().zip(hi.parse().ok());
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "P5" || tokens[3] != "65535" {
        return Err(bad("expected a 16-bit P5 graymap"));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let body = &bytes[pos.min(bytes.len())..];
    if body.len() != 2 * width * height {
        return Err(bad("sample count does not match header"));
    }
    let samples = body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(Graymap {
        width,
        height,
        samples,
        range,
    })
}

/// `key,value` lines.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.split_once(',')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| parse_err(path, i + 1, "expected key,value"))
        })
        .collect()
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        let v = vec![0.1, -1e-300, 1.0 / 3.0, 12345.678, 0.0];
        write_vector(&p, &v).unwrap();
        assert_eq!(read_vector(&p).unwrap(), v);
    }

    #[test]
    fn graymap_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        let data = [0.0, 0.5, 1.0, 0.25, 0.75, 1.0];
        write_pgm16(&p, 3, 2, &data).unwrap();
        let g = read_pgm16(&p).unwrap();
        assert_eq!((g.width, g.height), (3, 2));
        assert_eq!(g.range, Some((0.0, 1.0)));
        assert_eq!(g.samples, vec![0, 32768, 65535, 16384, 49151, 65535]);
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_matrix(&p).is_err());
        assert!(matches!(read_matrix(&dir.path().join("nope.csv")), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        atomic_write(&dir.path().join("a.txt"), b"one").unwrap();
        atomic_write(&dir.path().join("a.txt"), b"two").unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
        assert_eq!(fs::read(dir.path().join("a.txt")).unwrap(), b"two");
    }
}
