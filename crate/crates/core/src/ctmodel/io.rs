//! 16-bit PGM images with a min/max sidecar, and sinogram CSV files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{CtError, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFormat {
    /// `P2`
    Ascii,
    /// `P5`, big-endian 16-bit samples
    Binary,
}

/// Sidecar path holding the intensity scaling: `<image>.pgm` → `<image>.scale.txt`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("scale.txt")
}

/// Writes a row-major `side×side` image scaled linearly from `[min, max]` to
/// `[0, 65535]`, plus the sidecar with `min` and `max`.
pub fn write_pgm(path: &Path, image: &[f64], side: usize, format: PgmFormat) -> Result<(), CtError> {
    if image.len() != side * side {
        return Err(CtError::Format(format!(
            "{} pixels for a {side}x{side} image",
            image.len()
        )));
    }
    let min = image.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = image.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    let levels: Vec<u16> = image
        .iter()
        .map(|&v| (((v - min) / span) * 65535.0).round().clamp(0.0, 65535.0) as u16)
        .collect();

    let mut w = BufWriter::new(File::create(path)?);
    match format {
        PgmFormat::Ascii => {
            writeln!(w, "P2\n{side} {side}\n65535")?;
            for row in levels.chunks(side) {
                let line: Vec<String> = row.iter().map(u16::to_string).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        PgmFormat::Binary => {
            write!(w, "P5\n{side} {side}\n65535\n")?;
            for l in &levels {
                w.write_all(&l.to_be_bytes())?;
            }
        }
    }
    w.flush()?;
    fs::write(sidecar_path(path), format!("min {min:e}\nmax {max:e}\n"))?;
    Ok(())
}

/// Reads a PGM written by [`write_pgm`] and undoes the scaling using the sidecar.
pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, usize), CtError> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| CtError::Format(format!("{}: {msg}", path.display()));

    // header: magic, width, height, maxval, separated by whitespace
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
    if width != height {
        return Err(bad("image is not square"));
    }
    let count = width * height;
    let levels: Vec<u16> = match fields[0].as_str() {
        "P2" => String::from_utf8_lossy(&bytes[pos..])
            .split_whitespace()
            .map(|t| t.parse::<u16>().map_err(|_| bad("sample")))
            .collect::<Result<_, _>>()?,
        "P5" => {
            let data = &bytes[pos + 1..];
            if data.len() < 2 * count {
                return Err(bad("truncated raster"));
            }
            data.chunks_exact(2).take(count).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        }
        _ => return Err(bad("unsupported magic")),
    };
    if levels.len() != count {
        return Err(bad("wrong sample count"));
    }

    let sidecar = fs::read_to_string(sidecar_path(path))?;
    let mut min = None;
    let mut max = None;
    for line in sidecar.lines() {
        let mut it = line.split_whitespace();
        match (it.next(), it.next().and_then(|v| v.parse::<f64>().ok())) {
            (Some("min"), Some(v)) => min = Some(v),
            (Some("max"), Some(v)) => max = Some(v),
            _ => {}
        }
    }
    let (min, max) = min.zip(max).ok_or_else(|| bad("sidecar lacks min/max"))?;
    let span = if max > min { max - min } else { 1.0 };
    Ok((levels.iter().map(|&l| min + span * l as f64 / 65535.0).collect(), width))
}

/// One row per projection angle.
pub fn write_sinogram_csv(path: &Path, sino: &Sinogram) -> Result<(), CtError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    for proj in sino.projections() {
        w.write_record(proj.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sinogram_csv(path: &Path) -> Result<Sinogram, CtError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut offsets = vec![0];
    for rec in r.records() {
        for field in rec?.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| CtError::Format(format!("sinogram value `{field}`: {e}")))?,
            );
        }
        offsets.push(values.len());
    }
    Sinogram::new(values, super::AnglePartition::from_offsets(offsets)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let img: Vec<f64> = (0..16).map(|i| 0.25 * i as f64 - 1.0).collect();
        for (name, fmt) in [("a.pgm", PgmFormat::Ascii), ("b.pgm", PgmFormat::Binary)] {
            let p = dir.path().join(name);
            write_pgm(&p, &img, 4, fmt).unwrap();
            assert!(sidecar_path(&p).exists());
            let (back, side) = read_pgm(&p).unwrap();
            assert_eq!(side, 4);
            for (x, y) in img.iter().zip(&back) {
                assert!((x - y).abs() < 3.75 / 65535.0);
            }
        }
        let head = std::fs::read(dir.path().join("a.pgm")).unwrap();
        assert!(head.starts_with(b"P2\n4 4\n65535\n"));
    }

    #[test]
    fn pgm_rejects_wrong_size() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_pgm(&dir.path().join("x.pgm"), &[0.0; 5], 2, PgmFormat::Ascii).is_err());
    }

    #[test]
    fn sinogram_csv_one_row_per_angle() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = Sinogram::uniform((0..6).map(|i| i as f64 / 3.0).collect(), 3).unwrap();
        write_sinogram_csv(&p, &s).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
        assert_eq!(read_sinogram_csv(&p).unwrap(), s);
    }
}
