//! Dataset representation, synthetic data generation, clustering of the data
//! space and the per-cluster moment statistics behind the cheap
//! control-variate sum.

mod cluster;

pub use cluster::{build_clusters, ClusterModel};

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::log1p_exp;

const MAGIC: &[u8; 4] = b"SMC1";

/// Immutable dataset: binary (or real) responses and covariate rows.
///
/// The generated and imported covariate matrices carry a leading column of
/// ones for the intercept; hand-built datasets (tests, toys) are free to use
/// arbitrary rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    responses: Vec<f64>,
    covariates: DMatrix<f64>,
    positive_index: Vec<usize>,
    negative_index: Vec<usize>,
}

impl Dataset {
    /// Build a dataset from raw parts, validating finiteness and shape.
    pub fn from_parts(responses: Vec<f64>, covariates: DMatrix<f64>) -> Result<Self> {
        if responses.len() != covariates.nrows() {
            return Err(Error::invalid(format!(
                "response length {} does not match covariate rows {}",
                responses.len(),
                covariates.nrows()
            )));
        }
        if responses.is_empty() {
            return Err(Error::invalid("dataset must contain at least one row"));
        }
        if covariates.ncols() == 0 {
            return Err(Error::invalid("covariate dimension p must be >= 1"));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates contain non-finite entries"));
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("responses contain non-finite entries"));
        }
        let mut positive_index = Vec::new();
        let mut negative_index = Vec::new();
        for (k, &y) in responses.iter().enumerate() {
            if y == 1.0 {
                positive_index.push(k);
            } else {
                negative_index.push(k);
            }
        }
        Ok(Dataset {
            responses,
            covariates,
            positive_index,
            negative_index,
        })
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn response(&self, k: usize) -> f64 {
        self.responses[k]
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    /// Indices with y_k = 1.
    pub fn positive_index(&self) -> &[usize] {
        &self.positive_index
    }

    /// Indices with y_k != 1.
    pub fn negative_index(&self) -> &[usize] {
        &self.negative_index
    }

    /// Write in the binary column-major format: magic "SMC1", then `n` and
    /// `p` as u64 LE, the `n` responses, and the `p` covariate columns, all
    /// f64 LE.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC)?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.p() as u64).to_le_bytes())?;
        for &y in &self.responses {
            w.write_all(&y.to_le_bytes())?;
        }
        for j in 0..self.p() {
            for i in 0..self.n() {
                w.write_all(&self.covariates[(i, j)].to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("bad magic bytes, not an SMC1 dataset file"));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let n = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf8)?;
        let p = u64::from_le_bytes(buf8) as usize;
        if n == 0 || p == 0 {
            return Err(Error::format("dataset header declares empty dimensions"));
        }
        let read_f64 = |r: &mut BufReader<std::fs::File>| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut responses = Vec::with_capacity(n);
        for _ in 0..n {
            responses.push(read_f64(&mut r)?);
        }
        let mut covariates = DMatrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                covariates[(i, j)] = read_f64(&mut r)?;
            }
        }
        Dataset::from_parts(responses, covariates)
    }

    /// Import from CSV with a header row. The column named `y` holds the
    /// response; every other column is a covariate in file order. A leading
    /// intercept column of ones is prepended.
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path.as_ref())
            .map_err(|e| Error::format(format!("csv open failed: {e}")))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::format(format!("csv header: {e}")))?
            .clone();
        let y_col = headers
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| Error::format("csv is missing a column named 'y'"))?;

        let mut responses = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::format(format!("csv record: {e}")))?;
            let mut row = vec![1.0];
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(format!("non-numeric csv field '{field}'")))?;
                if j == y_col {
                    responses.push(v);
                } else {
                    row.push(v);
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::format("csv contains no data rows"));
        }
        let p = rows[0].len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::format("csv rows have inconsistent widths"));
        }
        let covariates = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Dataset::from_parts(responses, covariates)
    }
}

/// Law of the non-intercept covariate columns in synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateLaw {
    /// Independent standard normal entries.
    StandardNormal,
    /// Per-entry two-component Gaussian mixture 0.5 N(-1.5, 0.75^2) +
    /// 0.5 N(1.5, 0.75^2); gives the covariate space clusterable structure.
    GaussianMixture,
}

/// Recipe for a reproducible synthetic logistic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub true_beta: Vec<f64>,
    pub covariate_law: CovariateLaw,
    pub seed: u64,
}

/// Generate `y_k ~ Bernoulli(sigma(x_k' beta_true))` with the first covariate
/// column fixed to one. Bit-identical for identical specs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n < 1 || spec.p < 1 {
        return Err(Error::invalid("synthetic spec needs n >= 1 and p >= 1"));
    }
    if spec.true_beta.len() != spec.p {
        return Err(Error::invalid(format!(
            "true_beta length {} does not match p = {}",
            spec.true_beta.len(),
            spec.p
        )));
    }
    if spec.true_beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("true_beta contains non-finite entries"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut covariates = DMatrix::zeros(spec.n, spec.p);
    for i in 0..spec.n {
        covariates[(i, 0)] = 1.0;
        for j in 1..spec.p {
            covariates[(i, j)] = match spec.covariate_law {
                CovariateLaw::StandardNormal => rng.sample(rand_distr::StandardNormal),
                CovariateLaw::GaussianMixture => {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    let mean = if rng.random::<f64>() < 0.5 { -1.5 } else { 1.5 };
                    mean + 0.75 * z
                }
            };
        }
    }
    let beta = nalgebra::DVector::from_column_slice(&spec.true_beta);
    let t = &covariates * &beta;
    let responses: Vec<f64> = t
        .iter()
        .map(|&tk| {
            // P(y=1) = sigma(t) = exp(t - log(1+e^t))
            let logp = tk - log1p_exp(tk);
            if rng.random::<f64>().ln() < logp {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Dataset::from_parts(responses, covariates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(n: usize, p: usize, beta: &[f64], seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n,
            p,
            true_beta: beta.to_vec(),
            covariate_law: CovariateLaw::StandardNormal,
            seed,
        }
    }

    #[test]
    fn zero_beta_gives_balanced_classes() {
        let data = generate_synthetic(&spec(20_000, 3, &[0.0, 0.0, 0.0], 11)).unwrap();
        let frac = data.positive_index().len() as f64 / data.n() as f64;
        // 3-sigma binomial band around 1/2
        let band = 3.0 * (0.25f64 / 20_000.0).sqrt();
        assert!((frac - 0.5).abs() < band, "frac = {frac}");
    }

    #[test]
    fn negative_intercept_gives_sparse_positives() {
        let d = generate_synthetic(&spec(30_000, 3, &[-4.0, 1.0, 1.0], 5)).unwrap();
        let frac = d.positive_index().len() as f64 / d.n() as f64;
        assert!(frac < 0.1, "positive fraction {frac} not sparse");

        // Monte Carlo oracle: empirical positives track the mean of
        // sigma(x'beta) over the realized covariates.
        let beta = nalgebra::DVector::from_column_slice(&[-4.0, 1.0, 1.0]);
        let t = d.covariates() * beta;
        let mean_p: f64 =
            t.iter().map(|&tk| (tk - log1p_exp(tk)).exp()).sum::<f64>() / d.n() as f64;
        let sd = (mean_p * (1.0 - mean_p) / d.n() as f64).sqrt();
        assert!(
            (frac - mean_p).abs() < 3.0 * sd,
            "frac {frac} vs oracle {mean_p}"
        );
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let s = spec(500, 4, &[0.5, -1.0, 0.0, 2.0], 99);
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 100, ..s }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mixture_law_is_reproducible_and_spread() {
        let s = SyntheticSpec {
            n: 2000,
            p: 2,
            true_beta: vec![0.0, 0.3],
            covariate_law: CovariateLaw::GaussianMixture,
            seed: 3,
        };
        let a = generate_synthetic(&s).unwrap();
        assert_eq!(a, generate_synthetic(&s).unwrap());
        // Mixture variance = 0.75^2 + 1.5^2 = 2.8125 > 2
        let col = a.covariates().column(1);
        let mean = col.sum() / 2000.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2000.0;
        assert!(var > 2.0, "var = {var}");
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_synthetic(&spec(0, 1, &[], 0)).is_err());
        assert!(generate_synthetic(&spec(10, 2, &[1.0], 0)).is_err());
        assert!(generate_synthetic(&spec(10, 1, &[f64::INFINITY], 0)).is_err());
    }

    #[test]
    fn class_index_partition() {
        let d = generate_synthetic(&spec(1000, 2, &[0.0, 1.0], 8)).unwrap();
        assert_eq!(d.positive_index().len() + d.negative_index().len(), d.n());
        for &k in d.positive_index() {
            assert_eq!(d.response(k), 1.0);
        }
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let d = generate_synthetic(&spec(137, 3, &[0.1, -0.2, 0.4], 21)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.smc1");
        d.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn csv_import_prepends_intercept() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "x1,y,x2\n0.5,1,2.0\n-0.25,0,4.0\n").unwrap();
        let d = Dataset::from_csv(&path).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.p(), 3);
        assert_eq!(d.responses(), &[1.0, 0.0]);
        assert_relative_eq!(d.covariates()[(0, 0)], 1.0);
        assert_relative_eq!(d.covariates()[(0, 1)], 0.5);
        assert_relative_eq!(d.covariates()[(1, 2)], 4.0);
    }

    #[test]
    fn csv_requires_y_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noy.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(Dataset::from_csv(&path).is_err());
    }
}
