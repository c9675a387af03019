//! Distance-based linear model: Gower centering, design and hat matrices,
//! the sum-of-squares partition and a permutation test on the pseudo-F.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::betadiv::DistanceMatrix;
use crate::error::{Error, Result};
use crate::ingest::{Outcome, OutcomeValues};
use crate::numeric::{compensated_sum, sig17};
use crate::rng::{substream, Domain, GENERATOR};

/// `G = J·[-½ d²]·J` with `J = I − 11′/n`.
pub fn gower_center(dist: &DistanceMatrix) -> DMatrix<f64> {
    let n = dist.len();
    let idx: Vec<usize> = (0..n).collect();
    gower_center_indexed(n, |i, j| dist.get(i, j), &idx)
}

/// Gower centering of the submatrix picked by `idx` (repeats allowed) from
/// a distance accessor.
pub(crate) fn gower_center_indexed(
    _n: usize,
    dist: impl Fn(usize, usize) -> f64,
    idx: &[usize],
) -> DMatrix<f64> {
    let m = idx.len();
    let mut a = DMatrix::from_fn(m, m, |r, c| {
        let d = dist(idx[r], idx[c]);
        -0.5 * d * d
    });
    let row_means: Vec<f64> = (0..m).map(|r| a.row(r).sum() / m as f64).collect();
    let grand = row_means.iter().sum::<f64>() / m as f64;
    for r in 0..m {
        for c in 0..m {
            a[(r, c)] += grand - row_means[r] - row_means[c];
        }
    }
    a
}

/// Regression design: an intercept followed by named covariate columns.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    sample_ids: Vec<String>,
    names: Vec<String>,
    x: DMatrix<f64>,
}

impl DesignMatrix {
    /// Intercept plus the outcome: one column for a continuous outcome, or
    /// `L − 1` indicator columns for `L` levels (first level is the
    /// reference).
    pub fn from_outcome(outcome: &Outcome) -> Result<Self> {
        let n = outcome.len();
        let mut names = vec!["(intercept)".to_string()];
        let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
        match outcome.values() {
            OutcomeValues::Continuous(v) => {
                names.push("outcome".into());
                cols.push(v.clone());
            }
            OutcomeValues::Categorical { levels, codes } => {
                for (l, level) in levels.iter().enumerate().skip(1) {
                    names.push(format!("outcome[{level}]"));
                    cols.push(codes.iter().map(|&c| (c == l) as u8 as f64).collect());
                }
            }
        }
        Self::from_columns(outcome.sample_ids().to_vec(), names, cols)
    }

    /// Intercept only.
    pub fn intercept(sample_ids: Vec<String>) -> Result<Self> {
        let n = sample_ids.len();
        Self::from_columns(sample_ids, vec!["(intercept)".into()], vec![vec![1.0; n]])
    }

    /// `cols[0]` must be the all-ones intercept.
    pub fn from_columns(sample_ids: Vec<String>, names: Vec<String>, cols: Vec<Vec<f64>>) -> Result<Self> {
        let n = sample_ids.len();
        if cols.is_empty() || cols.len() != names.len() || cols.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("design columns do not match sample count"));
        }
        if cols[0].iter().any(|&v| v != 1.0) {
            return Err(Error::invalid("first design column must be the intercept"));
        }
        if cols.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("design has non-finite entries"));
        }
        let x = DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]);
        let design = DesignMatrix { sample_ids, names, x };
        design.basis()?;
        Ok(design)
    }

    pub fn with_covariate(mut self, name: &str, values: &[f64]) -> Result<Self> {
        let mut cols: Vec<Vec<f64>> = (0..self.x.ncols()).map(|c| self.x.column(c).iter().copied().collect()).collect();
        cols.push(values.to_vec());
        self.names.push(name.to_string());
        Self::from_columns(self.sample_ids, self.names, cols)
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n_columns(&self) -> usize {
        self.x.ncols()
    }

    /// Orthonormal basis of the column space.
    pub fn basis(&self) -> Result<DMatrix<f64>> {
        orthonormal_basis(&self.x).map_err(|cols| Error::RankDeficient {
            columns: cols.into_iter().map(|c| self.names[c].clone()).collect(),
        })
    }
}

/// Modified Gram-Schmidt with one reorthogonalization pass. On rank
/// deficiency returns the indices of the columns that add nothing new.
pub(crate) fn orthonormal_basis(x: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, Vec<usize>> {
    let (n, g) = x.shape();
    let mut q = DMatrix::zeros(n, g);
    let mut collinear = Vec::new();
    for c in 0..g {
        let mut v = x.column(c).into_owned();
        let norm0 = v.norm();
        for _ in 0..2 {
            for k in 0..c {
                let proj = q.column(k).dot(&v);
                v.axpy(-proj, &q.column(k), 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            collinear.push(c);
            continue;
        }
        q.set_column(c, &(v / norm));
    }
    if collinear.is_empty() {
        Ok(q)
    } else {
        Err(collinear)
    }
}

/// `H = X(X′X)⁻¹X′`, formed as `QQ′` from an orthonormal basis of `X`.
pub fn hat_matrix(design: &DesignMatrix) -> Result<DMatrix<f64>> {
    let q = design.basis()?;
    Ok(&q * q.transpose())
}

/// `tr(Q′MQ)`, i.e. `tr(HM)` for `H = QQ′`.
pub(crate) fn projected_trace(m: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let mq = m * q;
    compensated_sum((0..q.ncols()).map(|k| q.column(k).dot(&mq.column(k))))
}

/// Total sum of squares `tr(G) = Σ_{i<j} d²ᵢⱼ / n` over the picked samples,
/// computed from distances so that identical samples give exactly zero.
pub(crate) fn total_ss_indexed(dist: impl Fn(usize, usize) -> f64, idx: &[usize]) -> f64 {
    let m = idx.len();
    let s = compensated_sum((0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).map(|(a, b)| {
        let d = dist(idx[a], idx[b]);
        d * d
    }));
    s / m as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct PermanovaResult {
    #[serde(serialize_with = "sig17::serialize")]
    pub ss_total: f64,
    #[serde(serialize_with = "sig17::serialize")]
    pub ss_among: f64,
    #[serde(serialize_with = "sig17::serialize")]
    pub ss_residual: f64,
    #[serde(serialize_with = "sig17::serialize")]
    pub r_squared: f64,
    #[serde(serialize_with = "sig17::serialize")]
    pub pseudo_f: f64,
    #[serde(serialize_with = "sig17::option::serialize", skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub n_permutations: usize,
    pub seed: u64,
    pub generator: &'static str,
}

impl PermanovaResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

fn pseudo_f(ss_among: f64, ss_residual: f64, n: usize, g: usize) -> f64 {
    if g < 2 {
        return f64::NAN;
    }
    let num = ss_among / (g - 1) as f64;
    let den = ss_residual / (n - g) as f64;
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        f64::NAN
    }
}

/// Fisher-Yates shuffle of `0..n` drawn from `rng`.
pub(crate) fn permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

/// PERMANOVA with `n_perms` design-row permutations (0 skips the test).
/// Permutation `k` uses its own substream of `seed`.
pub fn permanova(dist: &DistanceMatrix, design: &DesignMatrix, n_perms: usize, seed: u64) -> Result<PermanovaResult> {
    let n = dist.len();
    if design.sample_ids() != dist.sample_ids() {
        return Err(Error::invalid("design and distance matrix sample ids are not aligned"));
    }
    let g = design.n_columns();
    if g >= n {
        return Err(Error::invalid(format!("design has {g} columns for {n} samples")));
    }
    let idx: Vec<usize> = (0..n).collect();
    let ss_total = total_ss_indexed(|i, j| dist.get(i, j), &idx);
    if !(ss_total > 0.0) {
        return Err(Error::Degenerate("all samples are identical (tr(G) = 0)".into()));
    }
    let gmat = gower_center(dist);
    let q = design.basis()?;
    let ss_among = projected_trace(&gmat, &q);
    let ss_residual = ss_total - ss_among;
    let r_squared = ss_among / ss_total;
    if r_squared < 0.0 {
        log::warn!("negative R² ({r_squared:.3e}) from a non-Euclidean distance");
    }
    let f_obs = pseudo_f(ss_among, ss_residual, n, g);

    let p_value = if n_perms == 0 || g < 2 {
        None
    } else {
        let x = design.matrix();
        let hits: usize = (0..n_perms)
            .into_par_iter()
            .map(|k| {
                let mut rng = substream(seed, Domain::Permutation, k as u64);
                let perm = permutation(n, &mut rng);
                let xp = DMatrix::from_fn(n, g, |r, c| if c == 0 { 1.0 } else { x[(perm[r], c)] });
                let qp = orthonormal_basis(&xp).expect("permuted rows keep the rank");
                let among = projected_trace(&gmat, &qp);
                let f = pseudo_f(among, ss_total - among, n, g);
                // relative slack absorbs rounding when a permutation reproduces the observed fit
                (f >= f_obs - 1e-10 * f_obs.abs() || (f_obs.is_infinite() && f.is_infinite())) as usize
            })
            .sum();
        Some((1 + hits) as f64 / (1 + n_perms) as f64)
    };

    Ok(PermanovaResult {
        ss_total,
        ss_among,
        ss_residual,
        r_squared,
        pseudo_f: f_obs,
        p_value,
        n_permutations: n_perms,
        seed,
        generator: GENERATOR,
    })
}
