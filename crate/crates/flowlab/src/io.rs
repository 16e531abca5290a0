//! On-disk formats: JSON checkpoints, CSV tables, and P6 portable pixmaps.
//!
//! Floating point is written with 17 significant digits everywhere, which
//! round-trips any finite f64 exactly. Checkpoints key flat row-major
//! parameter arrays by layer name, so files are language-neutral and
//! diffable. A checkpoint save/load cycle reproduces parameters bit for bit.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data_eval::Histogram2D;
use crate::error::{FlowError, Result};
use crate::net::{Layer, Mlp, MlpSpec};
use crate::paths::ScheduleKind;

/// 17 significant digits: lossless decimal round-trip for f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct SigDigitFormatter;

impl serde_json::ser::Formatter for SigDigitFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{}", fmt_f64(value))
    }
}

/// Serialize any value as JSON with 17-significant-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigitFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A trained model on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: MlpSpec,
    pub schedule: ScheduleKind,
    pub seed: u64,
    pub train_steps: usize,
    /// `layer{i}.weight`, `layer{i}.bias`, and `embedding` when conditional.
    pub params: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model(mlp: &Mlp, schedule: ScheduleKind, seed: u64, train_steps: usize) -> Self {
        let mut params = BTreeMap::new();
        for (i, layer) in mlp.layers.iter().enumerate() {
            params.insert(format!("layer{i}.weight"), layer.weight.clone());
            params.insert(format!("layer{i}.bias"), layer.bias.clone());
        }
        if let Some(e) = &mlp.embedding {
            params.insert("embedding".to_string(), e.clone());
        }
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: mlp.spec.clone(),
            schedule,
            seed,
            train_steps,
            params,
        }
    }

    /// Rebuild the model, validating every array length against the spec.
    pub fn to_model(&self) -> Result<Mlp> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(FlowError::Checkpoint(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        self.spec.validate()?;
        let shapes = self.spec.layer_shapes();
        let mut layers = Vec::with_capacity(shapes.len());
        for (i, (rows, cols)) in shapes.into_iter().enumerate() {
            let weight = self.array(&format!("layer{i}.weight"), rows * cols)?;
            let bias = self.array(&format!("layer{i}.bias"), rows)?;
            layers.push(Layer { weight, bias, rows, cols });
        }
        let embedding = if self.spec.conditional() {
            Some(self.array("embedding", self.spec.embed_rows() * self.spec.embed_dim)?)
        } else {
            if self.params.contains_key("embedding") {
                return Err(FlowError::Checkpoint(
                    "unconditional spec with an embedding array".into(),
                ));
            }
            None
        };
        let mlp = Mlp { spec: self.spec.clone(), layers, embedding };
        Ok(mlp)
    }

    fn array(&self, key: &str, expected_len: usize) -> Result<Vec<f64>> {
        let arr = self
            .params
            .get(key)
            .ok_or_else(|| FlowError::Checkpoint(format!("missing parameter array '{key}'")))?;
        if arr.len() != expected_len {
            return Err(FlowError::Checkpoint(format!(
                "array '{key}' has {} entries, spec implies {expected_len}",
                arr.len()
            )));
        }
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::Checkpoint(format!(
                "array '{key}' contains non-finite entries"
            )));
        }
        Ok(arr.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = to_json_string(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| FlowError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| FlowError::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(ck)
    }
}

/// Write a samples CSV: `sample_id,x0..x{d-1}[,label,w]`.
pub fn write_samples_csv(
    path: &Path,
    samples: &[Vec<f64>],
    dim: usize,
    label: Option<usize>,
    w: Option<f64>,
) -> Result<()> {
    let mut out = String::new();
    out.push_str("sample_id");
    for i in 0..dim {
        out.push_str(&format!(",x{i}"));
    }
    if label.is_some() {
        out.push_str(",label,w");
    }
    out.push('\n');
    for (i, s) in samples.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in s {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        if let Some(y) = label {
            out.push_str(&format!(",{y},{}", fmt_f64(w.unwrap_or(1.0))));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write a loss history CSV: `step,loss`.
pub fn write_loss_csv(path: &Path, history: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (step, loss) in history {
        out.push_str(&format!("{step},{}\n", fmt_f64(*loss)));
    }
    fs::write(path, out)?;
    Ok(())
}

/// One row of a validation report.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub check: String,
    pub probe: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Write a validation report CSV: `check,probe,value,threshold,pass`.
pub fn write_checks_csv(path: &Path, rows: &[CheckRow]) -> Result<()> {
    let mut out = String::from("check,probe,value,threshold,pass\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.check,
            r.probe,
            fmt_f64(r.value),
            fmt_f64(r.threshold),
            r.pass
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write a histogram CSV: `bin_x,bin_y,count` plus a trailing
/// `out_of_bounds` row.
pub fn write_histogram_csv(path: &Path, hist: &Histogram2D) -> Result<()> {
    let mut out = String::from("bin_x,bin_y,count\n");
    for iy in 0..hist.ny {
        for ix in 0..hist.nx {
            out.push_str(&format!("{ix},{iy},{}\n", hist.count(ix, iy)));
        }
    }
    out.push_str(&format!("oob,oob,{}\n", hist.out_of_bounds));
    fs::write(path, out)?;
    Ok(())
}

pub const PPM_SIZE: usize = 512;

fn ppm_header() -> Vec<u8> {
    format!("P6\n{PPM_SIZE} {PPM_SIZE}\n255\n").into_bytes()
}

/// Render samples as a scatter plot: white background, 3x3-pixel black
/// marks, linear mapping of the bounds onto 512x512 pixels (y up).
pub fn scatter_ppm(samples: &[Vec<f64>], bounds: (f64, f64, f64, f64)) -> Vec<u8> {
    let (x_min, x_max, y_min, y_max) = bounds;
    let mut pixels = vec![255u8; PPM_SIZE * PPM_SIZE * 3];
    let scale = (PPM_SIZE - 1) as f64;
    for s in samples {
        let fx = (s[0] - x_min) / (x_max - x_min);
        let fy = (s[1] - y_min) / (y_max - y_min);
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            continue;
        }
        let px = (fx * scale).round() as i64;
        let py = (PPM_SIZE - 1) as i64 - (fy * scale).round() as i64;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (x, y) = (px + dx, py + dy);
                if (0..PPM_SIZE as i64).contains(&x) && (0..PPM_SIZE as i64).contains(&y) {
                    let idx = (y as usize * PPM_SIZE + x as usize) * 3;
                    pixels[idx] = 0;
                    pixels[idx + 1] = 0;
                    pixels[idx + 2] = 0;
                }
            }
        }
    }
    let mut out = ppm_header();
    out.extend_from_slice(&pixels);
    out
}

/// Render a histogram as a grayscale heatmap: white for empty bins, black
/// for the fullest bin.
pub fn heatmap_ppm(hist: &Histogram2D) -> Vec<u8> {
    let max = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut pixels = vec![255u8; PPM_SIZE * PPM_SIZE * 3];
    for py in 0..PPM_SIZE {
        for px in 0..PPM_SIZE {
            let ix = px * hist.nx / PPM_SIZE;
            // Row 0 of the image is the top of the y range.
            let iy = (PPM_SIZE - 1 - py) * hist.ny / PPM_SIZE;
            let c = hist.count(ix, iy) as f64;
            let level = (255.0 * (1.0 - c / max)).round() as u8;
            let idx = (py * PPM_SIZE + px) * 3;
            pixels[idx] = level;
            pixels[idx + 1] = level;
            pixels[idx + 2] = level;
        }
    }
    let mut out = ppm_header();
    out.extend_from_slice(&pixels);
    out
}

pub fn write_ppm(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::MlpSpec;
    use tempfile::tempdir;

    #[test]
    fn f64_formatting_round_trips() {
        for v in [
            0.0,
            1.0,
            -1.0,
            std::f64::consts::PI,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            1e300,
            -2.2250738585072014e-308,
        ] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s} -> {back}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mlp = Mlp::init(MlpSpec::with_classes(2, 3), 99).unwrap();
        let ck = Checkpoint::from_model(&mlp, ScheduleKind::Trig, 99, 1234);
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let rebuilt = loaded.to_model().unwrap();
        assert_eq!(rebuilt.flatten(), mlp.flatten());
        assert_eq!(loaded.schedule, ScheduleKind::Trig);
        assert_eq!(loaded.train_steps, 1234);

        // Saving the reloaded checkpoint reproduces the bytes.
        let path2 = dir.path().join("ck2.json");
        loaded.save(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn checkpoint_rejects_wrong_shapes() {
        let mlp = Mlp::init(MlpSpec::new(1), 3).unwrap();
        let mut ck = Checkpoint::from_model(&mlp, ScheduleKind::Condot, 3, 0);
        ck.params.get_mut("layer0.weight").unwrap().pop();
        assert!(ck.to_model().is_err());
        let mlp = Mlp::init(MlpSpec::new(1), 3).unwrap();
        let mut ck = Checkpoint::from_model(&mlp, ScheduleKind::Condot, 3, 0);
        ck.params.remove("layer0.bias");
        assert!(ck.to_model().is_err());
    }

    #[test]
    fn samples_csv_layout() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_samples_csv(&path, &[vec![1.0, 2.0]], 2, Some(1), Some(3.0)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "sample_id,x0,x1,label,w");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,"));
        assert!(row.ends_with(",1,3.0000000000000000e0"));

        // Header-only file for zero samples.
        write_samples_csv(&path, &[], 2, None, None).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "sample_id,x0,x1\n");
    }

    #[test]
    fn ppm_has_correct_size_and_header() {
        let img = scatter_ppm(&[vec![0.0, 0.0]], (-1.0, 1.0, -1.0, 1.0));
        assert!(img.starts_with(b"P6\n512 512\n255\n"));
        assert_eq!(img.len(), 15 + 512 * 512 * 3);
        // Center mark is black.
        let hist = crate::data_eval::histogram2d(
            &[vec![0.5, 0.5]],
            (0.0, 1.0, 0.0, 1.0),
            (2, 2),
        )
        .unwrap();
        let img = heatmap_ppm(&hist);
        assert_eq!(img.len(), 15 + 512 * 512 * 3);
    }
}
