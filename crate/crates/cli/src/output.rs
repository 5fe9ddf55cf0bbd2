//! CSV and JSON writers. Every file carries the resolved parameters: CSV
//! files in a leading `#` comment line, JSON files under `params`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// Round-trip exact formatting with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV text built in memory and written once the run is complete.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new<P: Serialize>(params: &P, header: &[String]) -> Result<Self, CliError> {
        let meta = serde_json::to_string(params).map_err(|e| CliError::Io(format!("cannot encode parameters: {e}")))?;
        Ok(Self { text: format!("# params: {meta}\n{}\n", header.join(",")) })
    }

    pub fn row(&mut self, values: impl IntoIterator<Item = f64>) {
        let mut first = true;
        for v in values {
            if !first {
                self.text.push(',');
            }
            first = false;
            let _ = write!(self.text, "{}", num(v));
        }
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, &self.text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(format!("cannot encode {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Wall-clock record kept apart from the deterministic outputs.
#[derive(Serialize)]
pub struct Timing<'a, P: Serialize> {
    pub command: &'a str,
    pub params: &'a P,
    pub wall_seconds: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_has_metadata_and_header() {
        let mut csv = Csv::new(&serde_json::json!({ "seed": 3 }), &["t".into(), "x".into()]).unwrap();
        csv.row([0.0, 1.5]);
        assert_eq!(csv.text, "# params: {\"seed\":3}\nt,x\n0.0000000000000000e0,1.5000000000000000e0\n");
    }
}
