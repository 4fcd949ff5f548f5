//! Gaussian-cluster mother datasets and the binary feature file format.
//!
//! Feature files start with the text line `AWMETA1 M d`, followed by one block
//! per class: a `CLASS <name> <count>` line and then `count·d` little-endian
//! `f64` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::episodes::{MotherDataset, SemanticClass};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{domain, mix, seeded, stream};

pub const MAGIC: &str = "AWMETA1";

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Radius of the sphere the class means are drawn on.
    pub mean_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Confine class means to the first `s` coordinates; the remaining ones
    /// carry zero-mean noise of `nuisance_sigma` and no class information.
    #[serde(default)]
    pub signal_dims: Option<usize>,
    #[serde(default = "default_nuisance")]
    pub nuisance_sigma: f64,
}

fn default_nuisance() -> f64 {
    3.0
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 30,
            dim: 16,
            per_class: 40,
            mean_scale: 3.0,
            noise_sigma: 0.5,
            seed: 0,
            signal_dims: None,
            nuisance_sigma: default_nuisance(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.dim == 0 || self.per_class == 0 {
            return Err(Error::Config("dimension and per-class count must be positive".into()));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!("noise sigma must be > 0, got {}", self.noise_sigma)));
        }
        if !(self.mean_scale >= 0.0) || !self.mean_scale.is_finite() {
            return Err(Error::Config(format!("mean scale must be >= 0, got {}", self.mean_scale)));
        }
        if let Some(sd) = self.signal_dims {
            if sd == 0 || sd > self.dim {
                return Err(Error::Config(format!("signal_dims must lie in 1..={}, got {sd}", self.dim)));
            }
            if !(self.nuisance_sigma > 0.0) || !self.nuisance_sigma.is_finite() {
                return Err(Error::Config(format!("nuisance sigma must be > 0, got {}", self.nuisance_sigma)));
            }
        }
        Ok(())
    }

    pub fn signal_dims(&self) -> usize {
        self.signal_dims.unwrap_or(self.dim)
    }

    /// Noise standard deviation of every coordinate.
    fn coordinate_sigmas(&self, scale: f64) -> Vec<f64> {
        (0..self.dim)
            .map(|k| {
                if k < self.signal_dims() {
                    self.noise_sigma * scale
                } else {
                    self.nuisance_sigma * scale
                }
            })
            .collect()
    }

    /// Checks that every class can fill a `shots + queries` episode.
    pub fn check_episode_size(&self, shots: usize, queries: usize) -> Result<()> {
        if self.per_class < shots + queries {
            return Err(Error::Config(format!(
                "per_class {} is smaller than shots + queries = {}",
                self.per_class,
                shots + queries
            )));
        }
        Ok(())
    }
}

fn gaussian_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// `M` points drawn uniformly on the sphere of radius `mean_scale`, one per row.
pub fn sample_means<R: Rng + ?Sized>(classes: usize, dim: usize, mean_scale: f64, rng: &mut R) -> Matrix {
    let mut means = Matrix::zeros(classes, dim);
    for c in 0..classes {
        let mut v = gaussian_vec(dim, rng);
        while v.iter().all(|&x| x == 0.0) {
            v = gaussian_vec(dim, rng);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (m, x) in means.row_mut(c).iter_mut().zip(v) {
            *m = mean_scale * x / norm;
        }
    }
    means
}

/// Haar-distributed orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v = gaussian_vec(dim, rng);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    Matrix::from_rows(&basis).expect("square basis")
}

fn populate<R: Rng + ?Sized>(
    means: &Matrix,
    per_class: usize,
    sigmas: &[f64],
    prefix: &str,
    rng: &mut R,
) -> Result<MotherDataset> {
    let d = means.cols();
    let classes = (0..means.rows())
        .map(|c| {
            let mean = means.row(c);
            let mut examples = Matrix::zeros(per_class, d);
            for r in 0..per_class {
                for ((x, &m), &sigma) in examples.row_mut(r).iter_mut().zip(mean).zip(sigmas) {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = m + sigma * z;
                }
            }
            SemanticClass {
                name: format!("{prefix}{:03}", c + 1),
                examples,
            }
        })
        .collect();
    MotherDataset::new(d, classes)
}

fn pad_columns(m: Matrix, dim: usize) -> Matrix {
    if m.cols() == dim {
        return m;
    }
    let mut out = Matrix::zeros(m.rows(), dim);
    for r in 0..m.rows() {
        out.row_mut(r)[..m.cols()].copy_from_slice(m.row(r));
    }
    out
}

/// Class means of the in-domain generator for `spec`.
pub fn class_means(spec: &SynthSpec) -> Matrix {
    let means = sample_means(
        spec.classes,
        spec.signal_dims(),
        spec.mean_scale,
        &mut stream(spec.seed, domain::DATA, 0),
    );
    pad_columns(means, spec.dim)
}

pub fn make_gaussian_mother(spec: &SynthSpec) -> Result<MotherDataset> {
    spec.validate()?;
    let means = class_means(spec);
    populate(&means, spec.per_class, &spec.coordinate_sigmas(1.0), "class", &mut stream(spec.seed, domain::DATA, 1))
}

/// Class means of the shifted generator: fresh means from a seed tied to
/// `rotation_seed`, then rotated by an orthogonal map drawn from it.
pub fn shifted_means(base: &SynthSpec, rotation_seed: u64) -> (Matrix, Matrix) {
    let fresh = pad_columns(
        sample_means(
            base.classes,
            base.signal_dims(),
            base.mean_scale,
            &mut stream(mix(rotation_seed), domain::DATA, 2),
        ),
        base.dim,
    );
    let rotation = random_rotation(base.dim, &mut seeded(rotation_seed));
    let rotated = fresh.matmul(&rotation).expect("matching dimensions");
    (fresh, rotated)
}

/// A cross-domain variant of `base`: new class means, rotated, with noise
/// scaled by `sigma_scale`.
pub fn make_shifted(base: &SynthSpec, rotation_seed: u64, sigma_scale: f64) -> Result<MotherDataset> {
    base.validate()?;
    if !(sigma_scale > 0.0) || !sigma_scale.is_finite() {
        return Err(Error::Config(format!("sigma scale must be > 0, got {sigma_scale}")));
    }
    let (_, means) = shifted_means(base, rotation_seed);
    populate(
        &means,
        base.per_class,
        &base.coordinate_sigmas(sigma_scale),
        "shifted",
        &mut stream(mix(rotation_seed), domain::DATA, 3),
    )
}

pub fn encode_features(ds: &MotherDataset) -> Result<Vec<u8>> {
    if ds.class_count() == 0 {
        return Err(Error::Validation("refusing to write a dataset with no classes".into()));
    }
    let d = ds.feature_dim();
    let mut out = format!("{MAGIC} {} {d}\n", ds.class_count()).into_bytes();
    for c in ds.classes() {
        if c.name.is_empty() || c.name.chars().any(char::is_whitespace) {
            return Err(Error::Validation(format!(
                "class name {:?} must be non-empty without whitespace",
                c.name
            )));
        }
        let rows = c.examples.rows();
        out.extend(format!("CLASS {} {rows}\n", c.name).into_bytes());
        if rows > 0 {
            for v in c.examples.data() {
                out.extend(v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn save_features(ds: &MotherDataset, path: &Path) -> Result<()> {
    let bytes = encode_features(ds)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, offset: usize, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            detail: detail.into(),
        }
    }

    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let bytes: &'a [u8] = self.bytes;
        let rest = &bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.fail(start, "unterminated header line"))?;
        let text = std::str::from_utf8(&rest[..end]).map_err(|_| self.fail(start, "header line is not UTF-8"))?;
        self.pos = start + end + 1;
        Ok((start, text))
    }

    fn number(&self, offset: usize, field: &str, what: &str) -> Result<usize> {
        field
            .parse()
            .map_err(|_| self.fail(offset, format!("invalid {what} {field:?}")))
    }
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<MotherDataset> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    if !bytes.starts_with(MAGIC.as_bytes()) {
        return Err(cur.fail(0, format!("missing {MAGIC} magic")));
    }
    let (at, header) = cur.line()?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 3 || fields[0] != MAGIC {
        return Err(cur.fail(at, format!("malformed header {header:?}")));
    }
    let m = cur.number(at, fields[1], "class count")?;
    let d = cur.number(at, fields[2], "dimension")?;
    if m == 0 {
        return Err(cur.fail(at, "file declares no classes"));
    }

    let mut classes = Vec::with_capacity(m);
    for _ in 0..m {
        if cur.pos >= bytes.len() {
            return Err(cur.fail(cur.pos, format!("truncated: expected {m} classes, found {}", classes.len())));
        }
        let (at, line) = cur.line()?;
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 3 || fields[0] != "CLASS" || fields[1].is_empty() {
            return Err(cur.fail(at, format!("malformed class line {line:?}")));
        }
        let name = fields[1].to_string();
        let count = cur.number(at, fields[2], "example count")?;
        let len = count
            .checked_mul(d)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| cur.fail(at, "example block size overflows"))?;
        let start = cur.pos;
        if bytes.len() - start < len {
            return Err(cur.fail(
                start,
                format!("truncated: class {name} needs {len} bytes, {} remain", bytes.len() - start),
            ));
        }
        let data: Vec<f64> = bytes[start..start + len]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        cur.pos = start + len;
        classes.push(SemanticClass {
            name,
            examples: Matrix::from_vec(count, d, data)?,
        });
    }
    if cur.pos != bytes.len() {
        return Err(cur.fail(cur.pos, format!("{} trailing bytes after last class", bytes.len() - cur.pos)));
    }
    MotherDataset::new(d, classes)
}

pub fn load_features(path: &Path) -> Result<MotherDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::sample_task;
    use crate::metrics::mean_std;

    fn nearest_mean_accuracy(means: &Matrix, ds: &MotherDataset) -> f64 {
        let mut correct = 0;
        let mut total = 0;
        for (c, class) in ds.classes().iter().enumerate() {
            for x in class.examples.iter_rows() {
                let best = (0..means.rows())
                    .map(|k| {
                        let d: f64 = x.iter().zip(means.row(k)).map(|(a, b)| (a - b).powi(2)).sum();
                        (k, d)
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap()
                    .0;
                correct += (best == c) as usize;
                total += 1;
            }
        }
        correct as f64 / total as f64
    }

    fn dist_matrix(m: &Matrix) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..m.rows() {
            for j in 0..m.rows() {
                out.push(m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
            }
        }
        out
    }

    #[test]
    fn counts_and_determinism() {
        let spec = SynthSpec { classes: 10, dim: 8, per_class: 50, ..SynthSpec::default() };
        let a = make_gaussian_mother(&spec).unwrap();
        assert_eq!(a.class_count(), 10);
        assert_eq!(a.total_examples(), 500);
        assert!(a.classes().iter().all(|c| c.examples.shape() == (50, 8)));
        assert_eq!(a, make_gaussian_mother(&spec).unwrap());
        assert_ne!(a, make_gaussian_mother(&SynthSpec { seed: 1, ..spec }).unwrap());
    }

    #[test]
    fn means_lie_on_the_sphere() {
        let spec = SynthSpec { mean_scale: 2.5, ..SynthSpec::default() };
        let means = class_means(&spec);
        for r in means.iter_rows() {
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_noise_collapses_to_means() {
        let spec = SynthSpec { noise_sigma: 1e-300, classes: 4, ..SynthSpec::default() };
        let ds = make_gaussian_mother(&spec).unwrap();
        let means = class_means(&spec);
        for (c, class) in ds.classes().iter().enumerate() {
            for r in class.examples.iter_rows() {
                assert_eq!(r, means.row(c));
            }
        }
    }

    #[test]
    fn default_separation_is_near_perfect_for_nearest_mean() {
        let spec = SynthSpec::default();
        let fresh = make_gaussian_mother(&SynthSpec { per_class: 200, ..spec.clone() }).unwrap();
        let acc = nearest_mean_accuracy(&class_means(&spec), &fresh);
        assert!(acc > 0.95, "{acc}");
    }

    #[test]
    fn signal_subspace_carries_all_class_information() {
        let spec = SynthSpec { signal_dims: Some(4), nuisance_sigma: 3.0, per_class: 200, ..SynthSpec::default() };
        let means = class_means(&spec);
        for r in means.iter_rows() {
            assert!(r[4..].iter().all(|&v| v == 0.0));
            let norm = r[..4].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 3.0).abs() < 1e-12);
        }
        let ds = make_gaussian_mother(&spec).unwrap();
        let mut nuisance = Vec::new();
        for class in ds.classes() {
            for row in class.examples.iter_rows() {
                nuisance.extend_from_slice(&row[4..]);
            }
        }
        let (_, std) = mean_std(&nuisance);
        assert!((std - 3.0).abs() < 0.05, "{std}");
        assert!(nearest_mean_accuracy(&means, &ds) < 0.9);
        assert!(matches!(
            make_gaussian_mother(&SynthSpec { signal_dims: Some(17), ..SynthSpec::default() }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for bad in [
            SynthSpec { classes: 1, ..SynthSpec::default() },
            SynthSpec { noise_sigma: 0.0, ..SynthSpec::default() },
            SynthSpec { per_class: 0, ..SynthSpec::default() },
        ] {
            assert!(matches!(make_gaussian_mother(&bad), Err(Error::Config(_))));
        }
        assert!(SynthSpec::default().check_episode_size(20, 21).is_err());
        assert!(make_shifted(&SynthSpec::default(), 1, 0.0).is_err());
    }

    #[test]
    fn rotation_is_orthogonal_and_preserves_distances() {
        let base = SynthSpec::default();
        let q = random_rotation(base.dim, &mut seeded(9));
        let qqt = q.matmul_nt(&q).unwrap();
        let id = Matrix::identity(base.dim);
        for (a, b) in qqt.data().iter().zip(id.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let (fresh, rotated) = shifted_means(&base, 9);
        for (a, b) in dist_matrix(&fresh).iter().zip(dist_matrix(&rotated)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn null_shift_matches_in_domain_statistics() {
        let base = SynthSpec { per_class: 200, ..SynthSpec::default() };
        let ds = make_shifted(&base, base.seed, 1.0).unwrap();
        let (_, means) = shifted_means(&base, base.seed);
        for r in means.iter_rows() {
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - base.mean_scale).abs() < 1e-12);
        }
        let mut residuals = Vec::new();
        for (c, class) in ds.classes().iter().enumerate() {
            for row in class.examples.iter_rows() {
                residuals.extend(row.iter().zip(means.row(c)).map(|(x, m)| x - m));
            }
        }
        let (mean, std) = mean_std(&residuals);
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((std - base.noise_sigma).abs() < 0.01, "{std}");
        assert!(nearest_mean_accuracy(&means, &ds) > 0.95);
    }

    #[test]
    fn wider_noise_hurts_nearest_mean() {
        let base = SynthSpec::default();
        let (_, means) = shifted_means(&base, 3);
        let calm = make_shifted(&base, 3, 1.0).unwrap();
        let noisy = make_shifted(&base, 3, 4.0).unwrap();
        assert!(nearest_mean_accuracy(&means, &noisy) < nearest_mean_accuracy(&means, &calm) - 0.1);
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let ds = make_gaussian_mother(&SynthSpec { classes: 3, dim: 5, per_class: 7, ..SynthSpec::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.awm");
        save_features(&ds, &path).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.classes().iter().zip(ds.classes()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.examples.data().iter().zip(b.examples.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"AWMETA1 3 5\nCLASS class001 7\n"));
        assert_eq!(bytes.len(), 12 + 3 * "CLASS class001 7\n".len() + 3 * 7 * 5 * 8);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let ds = make_gaussian_mother(&SynthSpec { classes: 2, dim: 2, per_class: 3, ..SynthSpec::default() }).unwrap();
        let good = encode_features(&ds).unwrap();
        let p = Path::new("mem");

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(&bad, p), Err(Error::Format { offset: 0, .. })));

        let truncated = &good[..good.len() - 4];
        match decode_features(truncated, p) {
            Err(Error::Format { offset, detail, .. }) => {
                assert!(detail.contains("truncated"));
                assert!(offset > 0);
            }
            other => panic!("{other:?}"),
        }

        let header_len = "AWMETA1 2 2\n".len();
        let mut wrong_dim = b"AWMETA1 2 3\n".to_vec();
        wrong_dim.extend(&good[header_len..]);
        assert!(matches!(decode_features(&wrong_dim, p), Err(Error::Format { .. })));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(decode_features(&trailing, p), Err(Error::Format { .. })));
    }

    #[test]
    fn invalid_datasets_are_not_written() {
        let empty = MotherDataset::new(3, vec![]).unwrap();
        assert!(matches!(encode_features(&empty), Err(Error::Validation(_))));
        let spaced = MotherDataset::new(
            1,
            vec![SemanticClass {
                name: "two words".into(),
                examples: Matrix::zeros(1, 1),
            }],
        )
        .unwrap();
        assert!(matches!(encode_features(&spaced), Err(Error::Validation(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("never.awm");
        assert!(save_features(&empty, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn generated_data_feeds_episodes() {
        let ds = make_gaussian_mother(&SynthSpec::default()).unwrap();
        let task = sample_task(&ds, 5, 5, 15, &mut seeded(0)).unwrap();
        assert_eq!(task.support.len(), 25);
        assert_eq!(task.query.len(), 75);
    }
}
