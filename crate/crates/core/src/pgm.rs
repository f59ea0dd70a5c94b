//! Binary (P5) PGM reading and writing for 8-bit label maps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::LabelGrid;

/// Encodes `grid` as P5 with optional `#` comment lines after the magic.
pub fn encode_pgm(grid: &LabelGrid, comments: &[String]) -> Vec<u8> {
    let mut out = b"P5\n".to_vec();
    for c in comments {
        for line in c.lines() {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
    }
    out.extend_from_slice(format!("{} {}\n255\n", grid.width(), grid.height()).as_bytes());
    out.extend_from_slice(grid.labels());
    out
}

/// Parses a P5 file, returning the grid and any header comments.
pub fn decode_pgm(bytes: &[u8]) -> Result<(LabelGrid, Vec<String>)> {
    let mut pos = 0usize;
    let mut comments = Vec::new();
    let mut tokens: Vec<String> = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // skip whitespace
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::Malformed("truncated PGM header".into()));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(bytes.len(), |e| pos + e);
            let text = String::from_utf8_lossy(&bytes[pos + 1..end]);
            comments.push(text.strip_prefix(' ').unwrap_or(&text).to_string());
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens[0] != "P5" {
        return Err(Error::BadMagic);
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Malformed(format!("bad PGM number {s:?}")))
    };
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Malformed(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| Error::Malformed("truncated PGM raster".into()))?;
    Ok((LabelGrid::from_labels(h, w, raster.to_vec())?, comments))
}

pub fn write_pgm(path: &Path, grid: &LabelGrid, comments: &[String]) -> Result<()> {
    std::fs::write(path, encode_pgm(grid, comments))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(LabelGrid, Vec<String>)> {
    decode_pgm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_comments() {
        let g = LabelGrid::from_labels(2, 3, vec![0, 1, 2, 3, 4, 10]).unwrap();
        let bytes = encode_pgm(&g, &["config=abc".into()]);
        assert!(bytes.starts_with(b"P5\n# config=abc\n3 2\n255\n"));
        let (back, comments) = decode_pgm(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(comments, vec!["config=abc".to_string()]);
    }

    #[test]
    fn rejects_other_formats() {
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0"), Err(Error::BadMagic)));
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }
}
