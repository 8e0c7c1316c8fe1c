//! Feature files.
//!
//! The binary form is a JSON manifest next to a payload file. Each payload
//! row is a little-endian `u32` class id followed by `dim` little-endian
//! `f64` values. When the manifest carries split counts the rows are stored
//! grouped as train, then val, then test. The CSV form is one row per
//! sample, `label,f0,...,fN-1`, with an optional header line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FeatureDataset, NormalizationRecord, Split};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;

pub const FEATURE_FORMAT: &str = "featreplay-features";
pub const FEATURE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub n_samples: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub dtype: String,
    /// Payload file name, relative to the manifest's directory.
    pub payload: String,
    /// Hex SHA-256 of the payload bytes.
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<SplitCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationRecord>,
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn row_bytes(dim: usize) -> usize {
    4 + 8 * dim
}

impl FeatureDataset {
    /// Reads a manifest (any extension but `.csv`) or a CSV fixture.
    pub fn load(path: &Path) -> Result<Self> {
        if is_csv(path) {
            Self::load_csv(path, None)
        } else {
            Self::load_manifest(path)
        }
    }

    /// Writes a manifest plus payload, or CSV when `path` ends in `.csv`.
    /// Rows are regrouped by split for the binary form.
    pub fn save(&self, path: &Path) -> Result<()> {
        if is_csv(path) {
            self.save_csv(path)
        } else {
            self.save_manifest(path)
        }
    }

    fn save_manifest(&self, path: &Path) -> Result<()> {
        let ds = if self.is_grouped() {
            self.clone()
        } else {
            self.grouped()?
        };
        let dim = ds.dim();
        let mut payload = Vec::with_capacity(ds.len() * row_bytes(dim));
        for i in 0..ds.len() {
            payload.extend_from_slice(&(ds.labels[i] as u32).to_le_bytes());
            for v in ds.features.row(i) {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin = payload_path(path);
        let counts = ds.split_counts();
        let manifest = Manifest {
            format: FEATURE_FORMAT.into(),
            version: FEATURE_FORMAT_VERSION,
            n_samples: ds.len(),
            dim,
            n_classes: ds.n_classes,
            dtype: "f64".into(),
            payload: bin
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: hex::encode(Sha256::digest(&payload)),
            splits: Some(counts),
            normalization: ds.normalization.clone(),
        };
        fs::write(&bin, &payload)?;
        fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    fn load_manifest(path: &Path) -> Result<Self> {
        let name = source_name(path);
        let text = fs::read_to_string(path)?;
        if text.trim().is_empty() {
            return Err(Error::format(&name, None, "missing manifest header"));
        }
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
            Error::format(
                &name,
                Some(format!("line {}, column {}", e.line(), e.column())),
                e.to_string(),
            )
        })?;
        if manifest.format != FEATURE_FORMAT {
            return Err(Error::format(
                &name,
                None,
                format!("unknown format `{}`", manifest.format),
            ));
        }
        if manifest.version != FEATURE_FORMAT_VERSION {
            return Err(Error::format(
                &name,
                None,
                format!("unsupported version {}", manifest.version),
            ));
        }
        if manifest.dtype != "f64" {
            return Err(Error::format(
                &name,
                None,
                format!("unsupported dtype `{}`", manifest.dtype),
            ));
        }
        if manifest.n_classes == 0 {
            return Err(Error::format(&name, None, "n_classes must be positive"));
        }
        if let Some(c) = manifest.splits {
            if c.total() != manifest.n_samples {
                return Err(Error::format(
                    &name,
                    None,
                    format!(
                        "split counts sum to {} but n_samples is {}",
                        c.total(),
                        manifest.n_samples
                    ),
                ));
            }
        }

        let bin = path.parent().unwrap_or(Path::new(".")).join(&manifest.payload);
        let bin_name = source_name(&bin);
        let payload = fs::read(&bin)?;
        let digest = hex::encode(Sha256::digest(&payload));
        if digest != manifest.sha256 {
            return Err(Error::format(
                &bin_name,
                None,
                format!("checksum {digest} does not match manifest {}", manifest.sha256),
            ));
        }
        log::info!("loaded payload {bin_name} sha256={digest}");

        let stride = row_bytes(manifest.dim);
        let expected = manifest.n_samples * stride;
        if payload.len() != expected {
            return Err(Error::format(
                &bin_name,
                Some(format!("byte offset {}", payload.len().min(expected))),
                format!(
                    "payload is {} bytes, expected {} rows of {} bytes",
                    payload.len(),
                    manifest.n_samples,
                    stride
                ),
            ));
        }

        let mut labels = Vec::with_capacity(manifest.n_samples);
        let mut data = Vec::with_capacity(manifest.n_samples * manifest.dim);
        for (i, row) in payload.chunks_exact(stride).enumerate() {
            let offset = i * stride;
            let y = u32::from_le_bytes(row[..4].try_into().expect("4-byte slice")) as usize;
            if y >= manifest.n_classes {
                return Err(Error::format(
                    &bin_name,
                    Some(format!("byte offset {offset} (row {i})")),
                    format!("label {y} outside 0..{}", manifest.n_classes),
                ));
            }
            labels.push(y);
            for (j, b) in row[4..].chunks_exact(8).enumerate() {
                let v = f64::from_le_bytes(b.try_into().expect("8-byte slice"));
                if !v.is_finite() {
                    return Err(Error::format(
                        &bin_name,
                        Some(format!("byte offset {} (row {i}, column {j})", offset + 4 + 8 * j)),
                        "non-finite feature value",
                    ));
                }
                data.push(v);
            }
        }

        let splits = match manifest.splits {
            Some(c) => std::iter::repeat_n(Split::Train, c.train)
                .chain(std::iter::repeat_n(Split::Val, c.val))
                .chain(std::iter::repeat_n(Split::Test, c.test))
                .collect(),
            None => vec![Split::Train; manifest.n_samples],
        };
        let features = Tensor::matrix(manifest.n_samples, manifest.dim, data)?;
        let mut ds = FeatureDataset::new(features, labels, splits, manifest.n_classes)?;
        if let Some(r) = manifest.normalization {
            if r.dim() != manifest.dim {
                return Err(Error::format(
                    &name,
                    None,
                    "normalization record has the wrong dimension",
                ));
            }
            ds.normalization = Some(r);
        }
        Ok(ds)
    }

    /// Reads `label,f0,...`. Every row is assigned to the train split. The
    /// class count defaults to one more than the largest label.
    pub fn load_csv(path: &Path, n_classes: Option<usize>) -> Result<Self> {
        let name = source_name(path);
        let text = fs::read_to_string(path)?;
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .peekable();
        let Some((_, first)) = lines.peek() else {
            return Err(Error::format(&name, None, "missing header or data rows"));
        };
        if first.split(',').next().map(str::trim) == Some("label") {
            lines.next();
        }

        let mut labels = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (ln, line) in lines {
            let at = || Some(format!("line {}", ln + 1));
            let mut fields = line.split(',').map(str::trim);
            let label = fields.next().unwrap_or_default();
            let y: usize = label
                .parse()
                .map_err(|_| Error::format(&name, at(), format!("bad label `{label}`")))?;
            if let Some(c) = n_classes {
                if y >= c {
                    return Err(Error::format(&name, at(), format!("label {y} outside 0..{c}")));
                }
            }
            let row: Vec<f64> = fields
                .enumerate()
                .map(|(j, f)| match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::format(
                        &name,
                        Some(format!("line {}, column {}", ln + 1, j + 2)),
                        format!("bad value `{f}`"),
                    )),
                })
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::format(
                        &name,
                        at(),
                        format!("expected {d} features, found {}", row.len()),
                    ));
                }
                _ => {}
            }
            labels.push(y);
            data.extend(row);
        }
        let Some(dim) = dim else {
            return Err(Error::format(&name, None, "no data rows"));
        };
        let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        let features = Tensor::matrix(labels.len(), dim, data)?;
        let n = labels.len();
        FeatureDataset::new(features, labels, vec![Split::Train; n], n_classes)
    }

    /// Writes `label,f0,...` with a header. Float text uses the shortest
    /// representation that parses back to the same bits. Split assignment is
    /// not stored.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("label");
        for j in 0..self.dim() {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for v in self.features.row(i) {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::SeededRng;

    fn two_rows() -> FeatureDataset {
        let x = Tensor::from_rows(&[vec![0.1, -3.5e-300, f64::MAX], vec![1.0 / 3.0, 7.25, -0.0]]).unwrap();
        FeatureDataset::new(x, vec![2, 0], vec![Split::Train, Split::Test], 3).unwrap()
    }

    #[test]
    fn empty_manifest_names_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.json");
        fs::write(&p, "").unwrap();
        let err = FeatureDataset::load(&p).unwrap_err();
        assert!(err.to_string().contains("missing manifest header"), "{err}");
    }

    #[test]
    fn empty_csv_names_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        fs::write(&p, "").unwrap();
        let err = FeatureDataset::load(&p).unwrap_err();
        assert!(err.to_string().contains("missing header"), "{err}");
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("two.json");
        let ds = two_rows();
        ds.save(&p).unwrap();
        let back = FeatureDataset::load(&p).unwrap();
        let bits = |d: &FeatureDataset| d.features.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("two.csv");
        let ds = two_rows();
        ds.save(&p).unwrap();
        let back = FeatureDataset::load_csv(&p, Some(3)).unwrap();
        let bits = |d: &FeatureDataset| d.features.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
        assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn hand_written_csv_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hand.csv");
        fs::write(&p, "1,0.5,0.25\n0,1,0\n").unwrap();
        let ds = FeatureDataset::load(&p).unwrap();
        assert_eq!(ds.n_classes, 2);
        assert_eq!(ds.features.data(), &[0.5, 0.25, 1.0, 0.0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "label,f0,f1\n0,1,2\n1,3\n").unwrap();
        let err = FeatureDataset::load(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        fs::write(&p, "0,1,2\n4,3,3\n").unwrap();
        let err = FeatureDataset::load_csv(&p, Some(3)).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("label 4"), "{err}");

        fs::write(&p, "0,1,x\n").unwrap();
        let err = FeatureDataset::load(&p).unwrap_err().to_string();
        assert!(err.contains("column 3"), "{err}");
    }

    fn corrupt(p: &Path, f: impl FnOnce(&mut Vec<u8>)) {
        let bin = payload_path(p);
        let mut bytes = fs::read(&bin).unwrap();
        f(&mut bytes);
        fs::write(&bin, &bytes).unwrap();
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        m.sha256 = hex::encode(Sha256::digest(&bytes));
        fs::write(p, serde_json::to_string(&m).unwrap()).unwrap();
    }

    #[test]
    fn label_out_of_range_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        two_rows().save(&p).unwrap();
        corrupt(&p, |b| b[row_bytes(3)] = 9);
        let err = FeatureDataset::load(&p).unwrap_err().to_string();
        assert!(err.contains("byte offset 28 (row 1)"), "{err}");
    }

    #[test]
    fn truncated_payload_is_a_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        two_rows().save(&p).unwrap();
        corrupt(&p, |b| b.truncate(b.len() - 8));
        let err = FeatureDataset::load(&p).unwrap_err().to_string();
        assert!(err.contains("expected 2 rows of 28 bytes"), "{err}");
    }

    #[test]
    fn checksum_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        two_rows().save(&p).unwrap();
        let bin = payload_path(&p);
        let mut bytes = fs::read(&bin).unwrap();
        bytes[10] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert!(FeatureDataset::load(&p).unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn malformed_manifest_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        fs::write(&p, "{\n  \"format\": 3\n}").unwrap();
        let err = FeatureDataset::load(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn thousand_samples_keep_declared_shape() {
        let mut rng = SeededRng::new(4);
        let n = 1000;
        let x = rng.normal_tensor(&[n, 7]);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(11)).collect();
        let splits: Vec<Split> = (0..n).map(|i| Split::ALL[i * 3 / n]).collect();
        let ds = FeatureDataset::new(x, labels, splits, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.json");
        ds.save(&p).unwrap();
        let back = FeatureDataset::load(&p).unwrap();
        assert_eq!((back.len(), back.dim(), back.n_classes), (1000, 7, 11));
        assert_eq!(back, ds);
    }

    #[test]
    fn ungrouped_rows_are_stored_grouped() {
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let ds = FeatureDataset::new(x, vec![0, 1, 0], vec![Split::Test, Split::Train, Split::Val], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.json");
        ds.save(&p).unwrap();
        let back = FeatureDataset::load(&p).unwrap();
        assert_eq!(back.features.data(), &[2.0, 3.0, 1.0]);
        assert_eq!(back.splits, vec![Split::Train, Split::Val, Split::Test]);
    }
}
