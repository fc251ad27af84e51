//! Result file layout and its byte-stable serialization.

use std::io;
use std::path::Path;

use serde::ser::Serialize;
use serde::{Deserialize, Serialize as DeriveSerialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, DeriveSerialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean query loss of the batch before the meta-update.
    pub meta_loss: f64,
    /// Mean query metric of the same batch.
    pub post_adaptation_metric: f64,
}

/// Mean and population standard deviation over evaluation tasks.
#[derive(Debug, Clone, PartialEq, DeriveSerialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub tasks: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
            tasks: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, DeriveSerialize, Deserialize)]
pub struct RunResult {
    pub version: String,
    pub config: ExperimentConfig,
    /// `mse`, `accuracy` or `return`.
    pub metric: String,
    pub records: Vec<IterationRecord>,
    /// Post-adaptation metric of the untrained initialization.
    pub baseline: Summary,
    /// Post-adaptation metric after meta-training.
    pub summary: Summary,
    /// Only present when timing was requested; its presence makes the file
    /// differ between otherwise identical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

/// Pretty JSON with every float written as `{:.16e}` (17 significant
/// digits), so identical values always produce identical bytes.
struct Fixed17<'a>(PrettyFormatter<'a>);

impl Formatter for Fixed17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes with the fixed float format; non-finite floats become `null`.
pub fn to_stable_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Fixed17(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

impl RunResult {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        to_stable_json(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        let s = String::from_utf8(to_stable_json(&vec![0.1, 1.0, -2.5e-300, f64::NAN]).unwrap()).unwrap();
        assert!(s.contains("1.0000000000000001e-1"));
        assert!(s.contains("1.0000000000000000e0"));
        assert!(s.contains("-2.5000000000000000e-300"));
        assert!(s.contains("null"));
        let back: Vec<Option<f64>> = serde_json::from_str(&s).unwrap();
        assert_eq!(back[0], Some(0.1));
    }

    #[test]
    fn summary_is_population_std() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.tasks), (2.0, 1.0, 2));
    }
}
