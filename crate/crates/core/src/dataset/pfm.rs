//! Single-channel PFM ("Pf") codec: little-endian only, rows stored
//! bottom-up.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::synthesis::DepthMap;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Encodes a grid as PFM bytes (values rounded to `f32`).
pub fn encode(grid: &Grid) -> Vec<u8> {
    let (w, h) = (grid.width(), grid.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for &v in grid.row(y) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes PFM bytes. `path` is only used in diagnostics.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Grid> {
    let mut fields = Vec::with_capacity(3);
    let mut pos = 0;
    while fields.len() < 3 {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format_err(path, "truncated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| format_err(path, "header is not text"))?
            .trim()
            .to_string();
        pos += end + 1;
        fields.push(line);
    }
    match fields[0].as_str() {
        "Pf" => {}
        "PF" => return Err(format_err(path, "three-channel PFM is not supported")),
        m => return Err(format_err(path, format!("bad magic {m:?}"))),
    }
    let dims: Vec<usize> = fields[1]
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format_err(path, format!("bad dimensions {:?}", fields[1])))?;
    let [w, h] = dims[..] else {
        return Err(format_err(path, format!("bad dimensions {:?}", fields[1])));
    };
    if w == 0 || h == 0 {
        return Err(format_err(path, "zero dimension"));
    }
    let scale: f64 = fields[2]
        .parse()
        .map_err(|_| format_err(path, format!("bad scale {:?}", fields[2])))?;
    if !(scale < 0.0) {
        return Err(format_err(path, "big-endian PFM (positive scale) is not supported"));
    }
    let payload = &bytes[pos..];
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(path, "dimensions overflow"))?;
    if payload.len() != need {
        return Err(format_err(
            path,
            format!("expected {need} payload bytes, found {}", payload.len()),
        ));
    }
    let mut data = vec![0.0; w * h];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let (row, col) = (i / w, i % w);
        let y = h - 1 - row;
        data[y * w + col] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
    }
    Grid::from_vec(w, h, data)
}

pub fn write_grid(grid: &Grid, path: &Path) -> Result<()> {
    fs::write(path, encode(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Writes a depth map.
pub fn pfm_write(depth: &DepthMap, path: &Path) -> Result<()> {
    write_grid(depth.grid(), path)
}

/// Reads a depth map; values must be finite and positive.
pub fn pfm_read(path: &Path) -> Result<DepthMap> {
    DepthMap::new(read_grid(path)?).map_err(|e| format_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bitwise_for_f32_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::from_fn(7, 5, |_, _| rng.random_range(0.1f32..80.0) as f64);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        pfm_write(&DepthMap::new(g.clone()).unwrap(), &p).unwrap();
        let back = pfm_read(&p).unwrap();
        assert_eq!(back.grid(), &g);
    }

    #[test]
    fn two_by_two_size() {
        let bytes = encode(&Grid::new(2, 2, 1.0));
        assert_eq!(bytes.len(), "Pf\n2 2\n-1.0\n".len() + 16);
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn rows_are_bottom_up() {
        let g = Grid::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = encode(&g);
        let payload = &b[b.len() - 8..];
        assert_eq!(f32::from_le_bytes(payload[..4].try_into().unwrap()), 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        let p = Path::new("x.pfm");
        let mut be = b"Pf\n1 1\n1.0\n".to_vec();
        be.extend_from_slice(&1.0f32.to_be_bytes());
        assert!(matches!(decode(&be, p), Err(Error::Format { .. })));
        assert!(decode(b"PF\n1 1\n-1.0\n000000000000", p).is_err());
        assert!(decode(b"P5\n1 1\n-1.0\n0000", p).is_err());
        assert!(decode(b"Pf\n1 x\n-1.0\n0000", p).is_err());
        assert!(decode(b"Pf\n2 2\n-1.0\n0000", p).is_err());
        assert!(decode(b"Pf\n", p).is_err());
        assert!(decode(&[], p).is_err());
    }
}
