//! Variance spectra, empirical PCA spectra of latent samples, and the
//! effective-dimension metric.
//!
//! A [`Spectrum`] is a non-increasing list of nonnegative variances. It is the
//! object both the water-filling solver and [`effective_dimension`] act on.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Default variance fraction used by [`effective_dimension`].
pub const DEFAULT_DEFF_THRESHOLD: f64 = 0.99;

/// Eigenvalues within this fraction of the largest one are treated as zero.
const EIGEN_CLAMP_RELATIVE: f64 = 1e-12;

/// Descending vector of nonnegative, finite variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    /// Wraps an already sorted spectrum, validating every invariant.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("spectrum must have at least one value"));
        }
        for (j, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("spectrum value {j} is {v}")));
            }
            if v < 0.0 {
                return Err(invalid(format!("spectrum value {j} is negative ({v})")));
            }
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("spectrum must be sorted non-increasing"));
        }
        Ok(Spectrum { values })
    }

    /// Sorts `values` descending (stable, so ties keep their input order) and
    /// validates the result.
    pub fn from_unsorted(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("NaN in spectrum".into()));
        }
        values.sort_by(|a, b| b.partial_cmp(a).expect("NaN filtered above"));
        Spectrum::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; a spectrum has at least one mode.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// True when every value is strictly smaller than its predecessor.
    pub fn is_strictly_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] < w[0])
    }

    /// Multiplies every value by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(invalid(format!("scale factor must be positive, got {factor}")));
        }
        Spectrum::new(self.values.iter().map(|v| v * factor).collect())
    }

    /// Keeps the first `m` modes.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.len() {
            return Err(invalid(format!("cannot truncate {} modes to {m}", self.len())));
        }
        Spectrum::new(self.values[..m].to_vec())
    }
}

impl AsRef<[f64]> for Spectrum {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// `values[j] = (j + 1)^(-exponent)`.
///
/// For negative exponents the values grow with `j`; they are then sorted
/// descending so the result is still a valid [`Spectrum`].
pub fn power_law_spectrum(d: usize, exponent: f64) -> Result<Spectrum> {
    if d == 0 {
        return Err(invalid("power-law spectrum needs d >= 1"));
    }
    if !exponent.is_finite() {
        return Err(Error::NonFinite(format!("exponent {exponent}")));
    }
    let values = (1..=d).map(|j| (j as f64).powf(-exponent)).collect();
    Spectrum::from_unsorted(values)
}

/// PCA spectrum of `samples` (rows are samples): eigenvalues of the centered
/// sample covariance with `n - 1` normalization, sorted descending.
///
/// Values below `1e-12 * max` (including small negatives from rounding) are
/// clamped to zero.
pub fn eigen_spectrum(samples: &DMatrix<f64>) -> Result<Spectrum> {
    let n = samples.nrows();
    if n < 2 {
        return Err(invalid(format!("need at least 2 samples, got {n}")));
    }
    if samples.ncols() == 0 {
        return Err(invalid("samples have zero columns"));
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sample entry {bad}")));
    }
    let cov = sample_covariance(samples);
    let eig = SymmetricEigen::try_new(cov, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    Spectrum::from_unsorted(clamp_eigenvalues(eig.eigenvalues.as_slice()))
}

/// Centered covariance of the rows of `samples`, divided by `n - 1`.
pub fn sample_covariance(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let n = samples.nrows();
    let mean = samples.row_mean();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut cov = centered.transpose() * &centered;
    cov /= (n - 1) as f64;
    // Symmetrize against rounding so the eigensolver sees an exactly symmetric input.
    let t = cov.transpose();
    (cov + t) * 0.5
}

pub(crate) fn clamp_eigenvalues(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(0.0_f64, f64::max);
    let tol = EIGEN_CLAMP_RELATIVE * max;
    values
        .iter()
        .map(|&v| if v <= tol { 0.0 } else { v })
        .collect()
}

/// Smallest `m` whose leading `m` values explain at least `threshold` of the
/// total variance.
pub fn effective_dimension(spectrum: &Spectrum, threshold: f64) -> Result<usize> {
    effective_dimension_of(spectrum.values(), threshold)
}

/// [`effective_dimension`] for a raw slice already sorted descending.
pub fn effective_dimension_of(sorted: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    let total: f64 = sorted.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroSpectrum);
    }
    // Compare running sums against threshold * total instead of forming the
    // ratio: with threshold 1 the running sum reaches `total` exactly at the
    // last positive value because the summation order is the same.
    let target = threshold * total;
    let mut acc = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        acc += v;
        if acc >= target {
            return Ok(i + 1);
        }
    }
    Ok(sorted.len())
}

/// Effective dimension of an unsorted list of variances.
pub fn effective_dimension_unsorted(values: &[f64], threshold: f64) -> Result<usize> {
    let spectrum = Spectrum::from_unsorted(values.to_vec())?;
    effective_dimension(&spectrum, threshold)
}

/// Parses latent samples: comma-separated decimal floats, one sample per row,
/// no column header. An optional first line `# dims=<d> samples=<n>` is
/// checked against the body. Blank lines are ignored.
pub fn parse_latent_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut declared: Option<(usize, usize)> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if declared.is_some() || !rows.is_empty() {
                return Err(Error::Parse { line: line_no, msg: "header must be the first line".into() });
            }
            declared = Some(parse_header(rest, line_no)?);
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: format!("bad float {:?}: {e}", f.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no samples".into() });
    }
    let (n, d) = (rows.len(), rows[0].len());
    if let Some((dims, samples)) = declared {
        if dims != d || samples != n {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header declares dims={dims} samples={samples}, body has dims={d} samples={n}"),
            });
        }
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

fn parse_header(rest: &str, line: usize) -> Result<(usize, usize)> {
    let mut dims = None;
    let mut samples = None;
    for token in rest.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::Parse { line, msg: format!("malformed header token {token:?}") })?;
        let value: usize = value
            .parse()
            .map_err(|e| Error::Parse { line, msg: format!("header value {value:?}: {e}") })?;
        match key {
            "dims" => dims = Some(value),
            "samples" => samples = Some(value),
            other => return Err(Error::Parse { line, msg: format!("unknown header key {other:?}") }),
        }
    }
    match (dims, samples) {
        (Some(d), Some(n)) => Ok((d, n)),
        _ => Err(Error::Parse { line, msg: "header needs both dims= and samples=".into() }),
    }
}

/// Reads a latent sample file; see [`parse_latent_csv`].
pub fn read_latent_csv(path: impl AsRef<Path>) -> std::io::Result<Result<DMatrix<f64>>> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_latent_csv(&text))
}

/// Reads a spectrum file: one or more comma- or newline-separated nonnegative
/// values, sorted descending on load. Lines starting with `#` are skipped.
pub fn parse_spectrum_text(text: &str) -> Result<Spectrum> {
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for field in line.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            let v: f64 = field.parse().map_err(|e| Error::Parse {
                line: idx + 1,
                msg: format!("bad float {field:?}: {e}"),
            })?;
            values.push(v);
        }
    }
    Spectrum::from_unsorted(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_examples() {
        let s = power_law_spectrum(64, 1.0).unwrap();
        assert_eq!(s.values()[0], 1.0);
        assert!((s.values()[63] - 1.0 / 64.0).abs() < 1e-15);
        assert_eq!(power_law_spectrum(1, 5.0).unwrap().values(), &[1.0]);
        assert_eq!(power_law_spectrum(3, 0.0).unwrap().values(), &[1.0, 1.0, 1.0]);
        assert!(power_law_spectrum(0, 1.0).is_err());
    }

    #[test]
    fn spectrum_rejects_bad_input() {
        assert!(Spectrum::new(vec![]).is_err());
        assert!(Spectrum::new(vec![1.0, 2.0]).is_err());
        assert!(Spectrum::new(vec![1.0, -0.5]).is_err());
        assert!(Spectrum::new(vec![f64::INFINITY]).is_err());
        assert!(Spectrum::from_unsorted(vec![f64::NAN]).is_err());
    }

    #[test]
    fn eigen_spectrum_of_two_points() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let s = eigen_spectrum(&x).unwrap();
        assert!((s.values()[0] - 2.0).abs() < 1e-12);
        assert_eq!(s.values()[1], 0.0);
    }

    #[test]
    fn eigen_spectrum_of_axis_aligned_points() {
        // +-3 along the first axis, +-1 along the second: variances 9*2/3, 1*2/3.
        let x = DMatrix::from_row_slice(4, 2, &[3.0, 0.0, -3.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let s = eigen_spectrum(&x).unwrap();
        assert!((s.values()[0] - 6.0).abs() < 1e-12);
        assert!((s.values()[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_spectrum_errors() {
        assert!(eigen_spectrum(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).is_err());
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(eigen_spectrum(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn effective_dimension_examples() {
        let one = Spectrum::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(effective_dimension(&one, 0.99).unwrap(), 1);
        let half = Spectrum::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(effective_dimension(&half, 0.99).unwrap(), 2);
        let zero = Spectrum::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(effective_dimension(&zero, 0.99), Err(Error::ZeroSpectrum));
        assert!(effective_dimension(&half, 0.0).is_err());
        assert!(effective_dimension(&half, 1.5).is_err());
    }

    #[test]
    fn full_threshold_counts_positive_values() {
        let s = Spectrum::new(vec![0.3, 0.1, 0.1, 1e-3, 0.0, 0.0]).unwrap();
        assert_eq!(effective_dimension(&s, 1.0).unwrap(), 4);
    }

    #[test]
    fn parses_latent_csv_with_header() {
        let m = parse_latent_csv("# dims=2 samples=3\n1,2\n3,4\n\n5,6\n").unwrap();
        assert_eq!((m.nrows(), m.ncols()), (3, 2));
        assert_eq!(m[(2, 1)], 6.0);
        assert!(parse_latent_csv("# dims=3 samples=3\n1,2\n3,4\n5,6\n").is_err());
        assert!(parse_latent_csv("1,2\n3\n").is_err());
        assert!(parse_latent_csv("1,x\n").is_err());
        assert!(parse_latent_csv("1,2\n# dims=2 samples=1\n").is_err());
        assert!(parse_latent_csv("").is_err());
    }

    #[test]
    fn parses_spectrum_text() {
        let s = parse_spectrum_text("# variances\n0.25, 1\n0.5\n").unwrap();
        assert_eq!(s.values(), &[1.0, 0.5, 0.25]);
    }
}
