//! Plain-text file formats.
//!
//! Matrix file:
//!
//! ```text
//! # matrix <rows> <cols>
//! v,v,v,...
//! ```
//!
//! Values are written in scientific notation with 17 significant digits,
//! which round-trips every finite `f64` exactly.
//!
//! Library file:
//!
//! ```text
//! # library <bands> <signatures>
//! name_1,name_2,...
//! # wavelengths_nm            (optional)
//! w_1,w_2,...,w_bands         (present iff the line above is)
//! r,r,...                     (bands rows × signatures columns)
//! ```
//!
//! Manifests are `key=value` lines; lines starting with `#` are comments.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::synth::SpectralLibrary;

/// Locale-independent, round-trip exact formatting of one value.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let t = s.trim();
    match t {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => t.parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("not a number: '{t}'"),
        }),
    }
}

fn parse_row(text: &str, line: usize, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|f| parse_f64(f, line))
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::Parse {
            line,
            message: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn matrix_to_string(m: ArrayView2<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 24 + 32);
    let _ = writeln!(out, "# matrix {} {}", m.nrows(), m.ncols());
    for row in m.rows() {
        let mut first = true;
        for &v in row {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&format_f64(v));
        }
        out.push('\n');
    }
    out
}

pub fn matrix_from_str(text: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty matrix file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (rows, cols) = match fields.as_slice() {
        ["#", "matrix", r, c] => (parse_dim(r, hline)?, parse_dim(c, hline)?),
        _ => {
            return Err(Error::Parse {
                line: hline,
                message: format!("expected '# matrix <rows> <cols>', found '{header}'"),
            })
        }
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if seen == rows {
            return Err(Error::Parse {
                line: lineno,
                message: format!("more than the declared {rows} rows"),
            });
        }
        data.extend(parse_row(line, lineno, cols)?);
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Parse {
            line: hline,
            message: format!("declared {rows} rows, found {seen}"),
        });
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Parse {
        line: hline,
        message: e.to_string(),
    })
}

fn parse_dim(s: &str, line: usize) -> Result<usize> {
    s.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("bad dimension '{s}'"),
    })
}

pub fn write_matrix(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    write_atomic(path, &matrix_to_string(m))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    matrix_from_str(&fs::read_to_string(path)?)
}

pub fn library_to_string(lib: &SpectralLibrary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# library {} {}", lib.bands(), lib.len());
    let _ = writeln!(out, "{}", lib.names.join(","));
    let _ = writeln!(out, "# wavelengths_nm");
    let wl: Vec<String> = lib.wavelengths.iter().map(|&w| format_f64(w)).collect();
    let _ = writeln!(out, "{}", wl.join(","));
    for row in lib.signatures.rows() {
        let vals: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        let _ = writeln!(out, "{}", vals.join(","));
    }
    out
}

/// Parses a library file. Without a wavelength header the bands are
/// numbered `0, 1, …`.
pub fn library_from_str(text: &str) -> Result<SpectralLibrary> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty library file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (bands, k) = match fields.as_slice() {
        ["#", "library", b, s] => (parse_dim(b, hline)?, parse_dim(s, hline)?),
        _ => {
            return Err(Error::Parse {
                line: hline,
                message: format!("expected '# library <bands> <signatures>', found '{header}'"),
            })
        }
    };
    let (nline, names_line) = lines.next().ok_or(Error::Parse {
        line: hline + 1,
        message: "missing signature names".into(),
    })?;
    let names: Vec<String> = names_line.split(',').map(|s| s.trim().to_string()).collect();
    if names.len() != k {
        return Err(Error::Parse {
            line: nline,
            message: format!("expected {k} names, found {}", names.len()),
        });
    }

    let mut rest: Vec<(usize, &str)> = lines.collect();
    let mut wavelengths: Vec<f64> = (0..bands).map(|i| i as f64).collect();
    if let Some((wline, l)) = rest.first().copied() {
        if l.trim() == "# wavelengths_nm" {
            let (vline, values) = rest.get(1).copied().ok_or(Error::Parse {
                line: wline,
                message: "wavelength header without values".into(),
            })?;
            wavelengths = parse_row(values, vline, bands)?;
            rest.drain(..2);
        }
    }
    if rest.len() != bands {
        return Err(Error::Parse {
            line: rest.last().map(|r| r.0).unwrap_or(nline),
            message: format!("declared {bands} bands, found {} data rows", rest.len()),
        });
    }
    let mut data = Vec::with_capacity(bands * k);
    for (lineno, line) in rest {
        data.extend(parse_row(line, lineno, k)?);
    }
    let signatures = Array2::from_shape_vec((bands, k), data).expect("row counts checked");
    SpectralLibrary::new(signatures, names, wavelengths)
}

pub fn read_library(path: &Path) -> Result<SpectralLibrary> {
    library_from_str(&fs::read_to_string(path)?)
}

pub fn write_library(path: &Path, lib: &SpectralLibrary) -> Result<()> {
    write_atomic(path, &library_to_string(lib))
}

/// Ordered `key=value` manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.push(key, format_f64(value))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                message: format!("expected key=value, found '{line}'"),
            })?;
            m.push(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_text())
    }
}

/// Tabular evaluation report: a summary block followed by one row per
/// estimated endmember.
pub fn report_to_string(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rms_sad={}", format_f64(r.rms_sad));
    let _ = writeln!(out, "rms_aad={}", format_f64(r.rms_aad));
    let _ = writeln!(out, "excluded_pixels={}", r.excluded_pixels);
    let _ = writeln!(out, "estimated,true,sad");
    for (est, &t) in r.assignment.iter().enumerate() {
        let _ = writeln!(out, "{est},{t},{}", format_f64(r.per_endmember_sad[t]));
    }
    out
}

pub fn report_from_str(text: &str) -> Result<EvalReport> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut summary = Manifest::new();
    for (i, line) in lines.by_ref() {
        if line == "estimated,true,sad" {
            break;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: i,
            message: format!("expected key=value, found '{line}'"),
        })?;
        summary.push(k, v);
    }
    let field = |key: &str| {
        summary.get(key).ok_or(Error::Parse {
            line: 1,
            message: format!("missing '{key}'"),
        })
    };
    let rms_sad = parse_f64(field("rms_sad")?, 1)?;
    let rms_aad = parse_f64(field("rms_aad")?, 2)?;
    let excluded_pixels = parse_dim(field("excluded_pixels")?, 3)?;
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: i,
                message: format!("expected 3 fields, found {}", parts.len()),
            });
        }
        rows.push((parse_dim(parts[1], i)?, parse_f64(parts[2], i)?));
    }
    let mut per_endmember_sad = vec![0.0; rows.len()];
    let mut assignment = Vec::with_capacity(rows.len());
    for (t, s) in rows {
        if t >= per_endmember_sad.len() {
            return Err(Error::Parse {
                line: 0,
                message: format!("true index {t} out of range"),
            });
        }
        per_endmember_sad[t] = s;
        assignment.push(t);
    }
    Ok(EvalReport {
        per_endmember_sad,
        rms_sad,
        rms_aad,
        assignment,
        excluded_pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn matrix_text_layout() {
        let m = array![[1.0, 0.5], [-2.0, 1e-300]];
        let text = matrix_to_string(m.view());
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# matrix 2 2"));
        assert_eq!(lines.next(), Some("1.0000000000000000e0,5.0000000000000000e-1"));
        assert!(text.ends_with('\n'));
        assert!(!text.contains('\r'));
        assert_eq!(matrix_from_str(&text).unwrap(), m);
    }

    #[test]
    fn matrix_parse_errors() {
        assert!(matrix_from_str("").is_err());
        assert!(matrix_from_str("# matrix 2 2\n1,2\n").is_err());
        assert!(matrix_from_str("# matrix 1 2\n1,2,3\n").is_err());
        assert!(matrix_from_str("# matrix 1 2\n1,x\n").is_err());
        assert!(matrix_from_str("# grid 1 2\n1,2\n").is_err());
        assert!(matrix_from_str("# matrix 1 1\n1\n2\n").is_err());
    }

    #[test]
    fn library_round_trip_and_optional_wavelengths() {
        let lib = SpectralLibrary::builtin();
        let text = library_to_string(&lib);
        assert_eq!(library_from_str(&text).unwrap(), lib);

        let bare = "# library 3 2\nalpha,beta\n0.1,0.2\n0.3,0.4\n0.5,0.6\n";
        let parsed = library_from_str(bare).unwrap();
        assert_eq!(parsed.names, vec!["alpha", "beta"]);
        assert_eq!(parsed.wavelengths, vec![0.0, 1.0, 2.0]);
        assert_eq!(parsed.signatures[[2, 1]], 0.6);

        assert!(library_from_str("# library 3 2\nalpha\n0.1,0.2\n0.3,0.4\n0.5,0.6\n").is_err());
        assert!(library_from_str("# library 3 2\nalpha,beta\n0.1,0.2\n0.3\n0.5,0.6\n").is_err());
        assert!(library_from_str("# library 3 2\na,b\n0.1,0.2\n").is_err());
    }

    #[test]
    fn bundled_library_file_matches_builtin() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/test_library.txt");
        assert_eq!(read_library(&path).unwrap(), SpectralLibrary::builtin());
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::new();
        m.push("p", 6).push_f64("sigma", 0.125).push("init", "vca");
        let parsed = Manifest::parse(&format!("# comment\n{}", m.to_text())).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(parsed.get("sigma"), Some("1.2500000000000000e-1"));
        assert!(Manifest::parse("novalue\n").is_err());
    }

    #[test]
    fn report_round_trip() {
        let r = EvalReport {
            per_endmember_sad: vec![0.1, 0.2, 0.05],
            rms_sad: 0.13,
            rms_aad: 0.2,
            assignment: vec![2, 0, 1],
            excluded_pixels: 3,
        };
        assert_eq!(report_from_str(&report_to_string(&r)).unwrap(), r);
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        write_atomic(&path, "hello\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "hello\n");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }

    proptest! {
        #[test]
        fn matrix_round_trip_is_bit_exact(
            rows in 1usize..5,
            cols in 1usize..5,
            bits in prop::collection::vec(any::<u64>(), 25),
        ) {
            let vals: Vec<f64> = bits
                .iter()
                .map(|&b| f64::from_bits(b))
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .take(rows * cols)
                .collect();
            let m = Array2::from_shape_vec((rows, cols), vals).unwrap();
            let back = matrix_from_str(&matrix_to_string(m.view())).unwrap();
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
