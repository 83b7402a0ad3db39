//! CSV artifacts. Every file starts with `#` comment lines identifying the
//! tool version, the config hash, the seed and the RNG.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct RunHeader {
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl RunHeader {
    fn lines(&self) -> Vec<String> {
        vec![
            format!("# tool: optmarket {}", env!("CARGO_PKG_VERSION")),
            format!("# config_sha256: {}", self.config_sha256),
            format!(
                "# seed: {}",
                self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into())
            ),
            format!("# rng: {}", optmarket::RNG_ALGORITHM),
        ]
    }
}

pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(dir: &Path, name: &str, header: &RunHeader, columns: &[&str]) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        let mut file = BufWriter::new(File::create(&path)?);
        for line in header.lines() {
            writeln!(file, "{line}")?;
        }
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(file);
        writer.write_record(columns)?;
        Ok(Self { path, writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

/// `printf("%.12g")`: 12 significant digits, trailing zeros removed.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..12).contains(&exp) {
        let m = trim(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim(&format!("{x:.*}", (11 - exp) as usize)).to_string()
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::num;

    #[test]
    fn formats_like_printf_g() {
        assert_eq!(num(1.0), "1");
        assert_eq!(num(0.5), "0.5");
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(0.34641016151377546), "0.346410161514");
        assert_eq!(num(1e-9), "1e-09");
        assert_eq!(num(123456789012345.0), "1.23456789012e+14");
        assert_eq!(num(2.0 / 3.0), "0.666666666667");
        assert_eq!(num(0.0001), "0.0001");
        assert_eq!(num(999999999999.5), "1e+12");
    }
}
