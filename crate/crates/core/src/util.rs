//! Small shared helpers: atomic file writes and fixed-significance decimal
//! formatting for the CSV interfaces.

use std::fs;
use std::io;
use std::path::Path;

/// Write a file via a temporary sibling and rename, so concurrent readers
/// never observe a half-written file.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let tmp = match path.file_name() {
        Some(name) => {
            let mut n = name.to_os_string();
            n.push(".tmp");
            path.with_file_name(n)
        }
        None => {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("not a file path: {}", path.display()),
            ))
        }
    };
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Plain-decimal formatting with a fixed number of significant digits.
pub fn format_sig(x: f64, sig: u32) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_sig_examples() {
        assert_eq!(format_sig(0.5, 9), "0.500000000");
        assert_eq!(format_sig(12.25, 9), "12.2500000");
        assert_eq!(format_sig(0.0, 9), "0");
        assert_eq!(format_sig(-std::f64::consts::LN_2, 9), "-0.693147181");
        assert_eq!(format_sig(123456789012.0, 9), "123456789012");
    }

    #[test]
    fn write_atomic_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, "a,b\n").unwrap();
        write_atomic(&path, "c,d\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "c,d\n");
        assert!(!path.with_file_name("out.csv.tmp").exists());
    }
}
