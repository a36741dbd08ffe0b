//! Reading and writing point clouds.
//!
//! Two formats are supported:
//!
//! * `xyz-text`: UTF-8, one point per line as three whitespace-separated
//!   floats. Lines starting with `#` are comments; blank lines are ignored.
//! * `f32-binary`: magic `GCPC`, `u32` LE version (1), `u32` LE point count,
//!   then `count × 3` little-endian `f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud};
use crate::error::{GeoError, ParseLocation, Result};

const MAGIC: &[u8; 4] = b"GCPC";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    XyzText,
    F32Binary,
}

impl Format {
    /// Guesses the format from a file extension: `.gcpc` and `.bin` are
    /// binary, everything else is text.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("gcpc") || e.eq_ignore_ascii_case("bin") => Format::F32Binary,
            _ => Format::XyzText,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "xyz" | "xyz-text" | "text" => Ok(Format::XyzText),
            "bin" | "f32-binary" | "binary" | "gcpc" => Ok(Format::F32Binary),
            other => Err(format!("unknown point cloud format '{other}'")),
        }
    }
}

pub fn read_cloud(path: impl AsRef<Path>, format: Format) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| GeoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let points = match format {
        Format::XyzText => parse_text(path, &bytes)?,
        Format::F32Binary => parse_binary(path, &bytes)?,
    };
    if points.is_empty() {
        return Err(GeoError::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    PointCloud::new(points)
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        Format::XyzText => encode_text(cloud),
        Format::F32Binary => encode_binary(cloud),
    };
    let io_err = |source| GeoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&bytes).map_err(io_err)?;
    Ok(())
}

fn parse_text(path: &Path, bytes: &[u8]) -> Result<Vec<Point3>> {
    let parse_err = |line: usize, message: String| GeoError::Parse {
        path: path.to_path_buf(),
        location: ParseLocation::Line(line),
        message,
    };
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        parse_err(line, "invalid UTF-8".into())
    })?;

    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let mut c = [0.0; 3];
        for (slot, tok) in c.iter_mut().zip(&fields) {
            *slot = tok
                .parse::<f64>()
                .map_err(|e| parse_err(line_no, format!("'{tok}': {e}")))?;
            if !slot.is_finite() {
                return Err(parse_err(line_no, format!("non-finite value '{tok}'")));
            }
        }
        points.push(Point3::from_array(c));
    }
    Ok(points)
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<Vec<Point3>> {
    let parse_err = |offset: usize, message: String| GeoError::Parse {
        path: path.to_path_buf(),
        location: ParseLocation::Byte(offset),
        message,
    };
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(bytes.len(), "truncated header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(parse_err(0, "bad magic, expected \"GCPC\"".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(parse_err(4, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    let expected = count * 12;
    if body.len() < expected {
        return Err(parse_err(
            bytes.len(),
            format!(
                "header declares {count} points but data ends after {} bytes",
                body.len()
            ),
        ));
    }
    if body.len() > expected {
        return Err(parse_err(
            HEADER_LEN + expected,
            format!("{} trailing bytes after {count} points", body.len() - expected),
        ));
    }
    let mut points = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(12).enumerate() {
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
        let p = Point3::new(f(0), f(4), f(8));
        if !p.is_finite() {
            return Err(parse_err(HEADER_LEN + i * 12, "non-finite coordinate".into()));
        }
        points.push(p);
    }
    Ok(points)
}

fn encode_text(cloud: &PointCloud) -> Vec<u8> {
    let mut s = String::with_capacity(cloud.len() * 48);
    if let Some(name) = &cloud.name {
        s.push_str("# ");
        s.push_str(&name.replace('\n', " "));
        s.push('\n');
    }
    // `{}` on f64 prints the shortest representation that parses back to the
    // same value.
    for p in cloud.points() {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    s.into_bytes()
}

fn encode_binary(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + cloud.len() * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.points() {
        for c in p.to_array() {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                // f32-representable so the binary round trip is exact
                let mut c = || rng.random_range(-1.0f32..1.0) as f64;
                Point3::new(c(), c(), c())
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn reads_simple_text() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xyz");
        fs::write(&p, "0 0 0\n1 0 0\n").unwrap();
        let c = read_cloud(&p, Format::XyzText).unwrap();
        assert_eq!(c.points(), &[Point3::ORIGIN, Point3::new(1.0, 0.0, 0.0)]);
    }

    #[test]
    fn text_comments_and_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xyz");
        fs::write(&p, "# header\n\n  1 2 3  \n# mid\n4\t5\t6\n\n").unwrap();
        let c = read_cloud(&p, Format::XyzText).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points()[1], Point3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn two_field_line_is_parse_error_on_line_1() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xyz");
        fs::write(&p, "0 0\n").unwrap();
        match read_cloud(&p, Format::XyzText) {
            Err(GeoError::Parse { location, .. }) => assert_eq!(location, ParseLocation::Line(1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xyz");
        fs::write(&p, "# nothing\n\n").unwrap();
        assert!(matches!(
            read_cloud(&p, Format::XyzText),
            Err(GeoError::EmptyFile { .. })
        ));
        let b = dir.path().join("a.gcpc");
        fs::write(&b, []).unwrap();
        assert!(matches!(
            read_cloud(&b, Format::F32Binary),
            Err(GeoError::EmptyFile { .. })
        ));
    }

    #[test]
    fn truncated_binary_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gcpc");
        let mut bytes = encode_binary(&random_cloud(3, 1));
        bytes.truncate(HEADER_LEN + 2 * 12);
        fs::write(&p, &bytes).unwrap();
        match read_cloud(&p, Format::F32Binary) {
            Err(GeoError::Parse { location, .. }) => {
                assert_eq!(location, ParseLocation::Byte(HEADER_LEN + 24))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gcpc");
        fs::write(&p, b"XXXX\x01\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(
            read_cloud(&p, Format::F32Binary),
            Err(GeoError::Parse {
                location: ParseLocation::Byte(0),
                ..
            })
        ));
    }

    #[test]
    fn binary_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.gcpc");
        let c = random_cloud(100, 7);
        write_cloud(&c, &p, Format::F32Binary).unwrap();
        let back = read_cloud(&p, Format::F32Binary).unwrap();
        for (a, b) in c.points().iter().zip(back.points()) {
            assert_eq!(a.to_array().map(f64::to_bits), b.to_array().map(f64::to_bits));
        }
    }

    #[test]
    fn text_round_trip_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.xyz");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..100)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let c = PointCloud::new(pts).unwrap().with_name("random");
        write_cloud(&c, &p, Format::XyzText).unwrap();
        let back = read_cloud(&p, Format::XyzText).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in c.points().iter().zip(back.points()) {
            assert!((*a - *b).to_array().iter().all(|d| d.abs() < 1e-8));
        }
    }

    #[test]
    fn write_to_unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing-dir").join("c.xyz");
        let c = random_cloud(2, 0);
        assert!(matches!(write_cloud(&c, &p, Format::XyzText), Err(GeoError::Io { .. })));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(Format::from_path(Path::new("a.gcpc")), Format::F32Binary);
        assert_eq!(Format::from_path(Path::new("a.xyz")), Format::XyzText);
    }
}
