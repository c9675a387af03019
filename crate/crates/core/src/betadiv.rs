//! Beta diversity: pairwise distance matrices, kernels and principal
//! coordinates.
//!
//! Each pair of samples is computed independently with a fixed summation
//! order, so a matrix is bit-identical whatever the thread count.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{decode_utf8, read_file, Error, Result};
use crate::ingest::CountTable;
use crate::numeric::{compensated_sum, format_sig17};
use crate::permanova::gower_center;
use crate::phylo::{PhyloTree, TaxonTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    BrayCurtis,
    Jaccard,
    WeightedUnifrac,
    UnweightedUnifrac,
    Euclidean,
    Precomputed,
}

impl Metric {
    pub fn tag(self) -> &'static str {
        match self {
            Metric::BrayCurtis => "bray-curtis",
            Metric::Jaccard => "jaccard",
            Metric::WeightedUnifrac => "weighted-unifrac",
            Metric::UnweightedUnifrac => "unweighted-unifrac",
            Metric::Euclidean => "euclidean",
            Metric::Precomputed => "precomputed",
        }
    }

    pub fn needs_tree(self) -> bool {
        matches!(self, Metric::WeightedUnifrac | Metric::UnweightedUnifrac)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Metric::BrayCurtis,
            Metric::Jaccard,
            Metric::WeightedUnifrac,
            Metric::UnweightedUnifrac,
            Metric::Euclidean,
            Metric::Precomputed,
        ]
        .into_iter()
        .find(|m| m.tag() == s)
        .ok_or_else(|| Error::invalid(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistanceOptions {
    /// Bray-Curtis on per-sample proportions instead of raw counts.
    pub bray_curtis_proportions: bool,
    /// Weighted UniFrac divided by its maximum (values in [0,1]).
    pub weighted_normalized: bool,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        DistanceOptions {
            bray_curtis_proportions: false,
            weighted_normalized: true,
        }
    }
}

/// Symmetric matrix with zero diagonal, stored as its strict upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    sample_ids: Vec<String>,
    upper: Vec<f64>,
    metric: Metric,
}

fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

impl DistanceMatrix {
    /// From the strict upper triangle in row order (`(0,1), (0,2), ..., (1,2), ...`).
    pub fn from_upper(sample_ids: Vec<String>, upper: Vec<f64>, metric: Metric) -> Result<Self> {
        let n = sample_ids.len();
        if n < 2 {
            return Err(Error::invalid("distance matrix needs at least 2 samples"));
        }
        if upper.len() != n * (n - 1) / 2 {
            return Err(Error::invalid("distance triangle has the wrong length"));
        }
        if let Some(k) = upper.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid(format!(
                "distance entry {k} is {} (must be finite and non-negative)",
                upper[k]
            )));
        }
        Ok(DistanceMatrix {
            sample_ids,
            upper,
            metric,
        })
    }

    /// From a full square matrix; the upper triangle is kept.
    pub fn from_dense(sample_ids: Vec<String>, full: &DMatrix<f64>, metric: Metric) -> Result<Self> {
        let n = sample_ids.len();
        if full.nrows() != n || full.ncols() != n {
            return Err(Error::invalid("distance matrix is not square with one row per sample"));
        }
        let mut upper = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(full[(i, j)]);
            }
        }
        Self::from_upper(sample_ids, upper, metric)
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.upper[pair_index(self.len(), i, j)],
            std::cmp::Ordering::Greater => self.upper[pair_index(self.len(), j, i)],
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }

    /// Rows and columns picked by index; repeats are allowed.
    pub fn select(&self, order: &[usize]) -> Result<DistanceMatrix> {
        let ids = order.iter().map(|&i| self.sample_ids[i].clone()).collect();
        let mut upper = Vec::with_capacity(order.len() * order.len().saturating_sub(1) / 2);
        for (a, &i) in order.iter().enumerate() {
            for &j in &order[a + 1..] {
                upper.push(self.get(i, j));
            }
        }
        DistanceMatrix::from_upper(ids, upper, self.metric)
    }

    /// Square TSV: a header row of sample ids (after an empty corner cell)
    /// and one row per sample.
    pub fn to_tsv(&self) -> String {
        let n = self.len();
        let mut out = String::new();
        for id in &self.sample_ids {
            out.push('\t');
            out.push_str(id);
        }
        out.push('\n');
        for i in 0..n {
            out.push_str(&self.sample_ids[i]);
            for j in 0..n {
                out.push('\t');
                out.push_str(&format!("{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Parse a square distance TSV. Row order may differ from the header; the
/// result follows the header. Asymmetry beyond 1e-9 (relative) is rejected.
pub fn parse_distance_matrix(bytes: &[u8]) -> Result<DistanceMatrix> {
    let text = decode_utf8(bytes)?;
    let mut rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = rows.next().ok_or_else(|| Error::invalid("distance matrix is empty"))?;
    let ids: Vec<String> = header.split('\t').skip(1).map(|s| s.trim().to_string()).collect();
    let n = ids.len();
    if n < 2 {
        return Err(Error::table(hline, 1, "distance matrix needs at least 2 samples"));
    }
    let col_of: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if col_of.len() != n {
        return Err(Error::table(hline, 1, "duplicate sample id in header"));
    }

    let mut full = vec![f64::NAN; n * n];
    let mut seen = vec![false; n];
    for (line, row) in rows {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != n + 1 {
            return Err(Error::table(
                line,
                fields.len().min(n + 1),
                format!("ragged row: {} fields, expected {}", fields.len(), n + 1),
            ));
        }
        let id = fields[0].trim();
        let &r = col_of
            .get(id)
            .ok_or_else(|| Error::table(line, 1, format!("row id `{id}` not in header")))?;
        if std::mem::replace(&mut seen[r], true) {
            return Err(Error::table(line, 1, format!("duplicate row `{id}`")));
        }
        for (c, cell) in fields[1..].iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::table(line, c + 2, format!("non-numeric distance `{cell}`")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::table(line, c + 2, format!("distance `{cell}` must be finite and non-negative")));
            }
            if r == c && v.abs() > 1e-9 {
                return Err(Error::table(line, c + 2, "non-zero diagonal"));
            }
            full[r * n + c] = v;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Missing {
            kind: "distance matrix rows",
            ids: vec![ids[missing].clone()],
        });
    }
    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (full[i * n + j], full[j * n + i]);
            if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::invalid(format!(
                    "distance matrix is not symmetric at ({}, {})",
                    ids[i], ids[j]
                )));
            }
            upper.push(a);
        }
    }
    DistanceMatrix::from_upper(ids, upper, Metric::Precomputed)
}

pub fn load_distance_matrix(path: impl AsRef<Path>) -> Result<DistanceMatrix> {
    parse_distance_matrix(&read_file(path.as_ref())?)
}

/// Evaluate `f` on every pair `i < j` in parallel, keeping row order.
fn pairwise<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| f(i, j))
        .collect()
}

fn warn_empty_pairs(metric: Metric, count: usize) {
    if count > 0 {
        log::warn!("{metric}: {count} pair(s) of samples with no counts; distance set to 0");
    }
}

pub fn bray_curtis(table: &CountTable) -> Result<DistanceMatrix> {
    bray_curtis_with(table, false)
}

/// Bray-Curtis on raw counts, or on per-sample proportions when
/// `proportions` is set.
pub fn bray_curtis_with(table: &CountTable, proportions: bool) -> Result<DistanceMatrix> {
    let n = table.n_samples();
    let totals: Vec<u64> = (0..n).map(|s| table.sample_total(s)).collect();
    let empty_pairs = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| totals[i] == 0 && totals[j] == 0)
        .count();
    warn_empty_pairs(Metric::BrayCurtis, empty_pairs);
    let upper = if proportions {
        let props: Vec<Vec<f64>> = (0..n)
            .map(|s| {
                let t = totals[s] as f64;
                table.row(s).iter().map(|&c| if t > 0.0 { c as f64 / t } else { 0.0 }).collect()
            })
            .collect();
        pairwise(n, |i, j| {
            let num = compensated_sum(props[i].iter().zip(&props[j]).map(|(a, b)| (a - b).abs()));
            let den = compensated_sum(props[i].iter().zip(&props[j]).map(|(a, b)| a + b));
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
    } else {
        pairwise(n, |i, j| {
            let (x, y) = (table.row(i), table.row(j));
            let num: u128 = x.iter().zip(y).map(|(&a, &b)| a.abs_diff(b) as u128).sum();
            let den = totals[i] as u128 + totals[j] as u128;
            if den > 0 {
                num as f64 / den as f64
            } else {
                0.0
            }
        })
    };
    DistanceMatrix::from_upper(table.sample_ids().to_vec(), upper, Metric::BrayCurtis)
}

/// Presence/absence Jaccard distance.
pub fn jaccard(table: &CountTable) -> Result<DistanceMatrix> {
    let n = table.n_samples();
    let empty: Vec<bool> = (0..n).map(|s| table.sample_total(s) == 0).collect();
    let empty_pairs = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| empty[i] && empty[j])
        .count();
    warn_empty_pairs(Metric::Jaccard, empty_pairs);
    let upper = pairwise(n, |i, j| {
        let (mut inter, mut union) = (0u64, 0u64);
        for (&a, &b) in table.row(i).iter().zip(table.row(j)) {
            inter += (a > 0 && b > 0) as u64;
            union += (a > 0 || b > 0) as u64;
        }
        if union == 0 {
            0.0
        } else {
            1.0 - inter as f64 / union as f64
        }
    });
    DistanceMatrix::from_upper(table.sample_ids().to_vec(), upper, Metric::Jaccard)
}

/// Euclidean distance on raw counts.
pub fn euclidean(table: &CountTable) -> Result<DistanceMatrix> {
    let upper = pairwise(table.n_samples(), |i, j| {
        let ss: u128 = table
            .row(i)
            .iter()
            .zip(table.row(j))
            .map(|(&a, &b)| {
                let d = a.abs_diff(b) as u128;
                d * d
            })
            .sum();
        (ss as f64).sqrt()
    });
    DistanceMatrix::from_upper(table.sample_ids().to_vec(), upper, Metric::Euclidean)
}

/// Feature column → tree node, failing on features with counts that the tree
/// lacks and on samples with no counts.
fn tree_columns(table: &CountTable, tree: &PhyloTree) -> Result<Vec<Option<usize>>> {
    let totals = table.column_sums();
    let mut missing = Vec::new();
    let cols: Vec<Option<usize>> = table
        .feature_ids()
        .iter()
        .zip(&totals)
        .map(|(f, &t)| match tree.leaf(f) {
            Some(node) => Some(node.0),
            None => {
                if t > 0 {
                    missing.push(f.clone());
                }
                None
            }
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing {
            kind: "features in the phylogeny",
            ids: missing,
        });
    }
    let empty: Vec<String> = (0..table.n_samples())
        .filter(|&s| table.sample_total(s) == 0)
        .map(|s| table.sample_ids()[s].clone())
        .collect();
    if !empty.is_empty() {
        return Err(Error::invalid(format!(
            "UniFrac needs positive sample totals; empty sample(s): {}",
            empty.join(", ")
        )));
    }
    Ok(cols)
}

/// Per-node sums of a leaf quantity, accumulated leaves-up.
fn accumulate(tree: &PhyloTree, leaf_values: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
    let mut node = vec![0.0; tree.n_nodes()];
    for (v, x) in leaf_values {
        node[v] += x;
    }
    for v in (1..tree.n_nodes()).rev() {
        let p = tree.parent(crate::phylo::NodeId(v)).unwrap().0;
        node[p] += node[v];
    }
    node
}

pub fn weighted_unifrac(table: &CountTable, tree: &PhyloTree, normalized: bool) -> Result<DistanceMatrix> {
    let cols = tree_columns(table, tree)?;
    let n = table.n_samples();
    let lengths: Vec<f64> = (0..tree.n_nodes()).map(|v| tree.length(crate::phylo::NodeId(v))).collect();
    let per_sample: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let total = table.sample_total(s) as f64;
            let leaves = table
                .row(s)
                .iter()
                .zip(&cols)
                .filter_map(|(&c, col)| col.map(|v| (v, c as f64 / total)));
            accumulate(tree, leaves)
        })
        .collect();
    let upper = pairwise(n, |i, j| {
        let (a, b) = (&per_sample[i], &per_sample[j]);
        let num = compensated_sum((1..lengths.len()).map(|v| lengths[v] * (a[v] - b[v]).abs()));
        if !normalized {
            return num;
        }
        let den = compensated_sum((1..lengths.len()).map(|v| lengths[v] * (a[v] + b[v])));
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    });
    DistanceMatrix::from_upper(table.sample_ids().to_vec(), upper, Metric::WeightedUnifrac)
}

pub fn unweighted_unifrac(table: &CountTable, tree: &PhyloTree) -> Result<DistanceMatrix> {
    let cols = tree_columns(table, tree)?;
    let n = table.n_samples();
    let lengths: Vec<f64> = (0..tree.n_nodes()).map(|v| tree.length(crate::phylo::NodeId(v))).collect();
    let present: Vec<Vec<bool>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let leaves = table
                .row(s)
                .iter()
                .zip(&cols)
                .filter_map(|(&c, col)| col.filter(|_| c > 0).map(|v| (v, 1.0)));
            accumulate(tree, leaves).into_iter().map(|x| x > 0.0).collect()
        })
        .collect();
    let upper = pairwise(n, |i, j| {
        let (a, b) = (&present[i], &present[j]);
        let unique = compensated_sum((1..lengths.len()).filter(|&v| a[v] != b[v]).map(|v| lengths[v]));
        let union = compensated_sum((1..lengths.len()).filter(|&v| a[v] || b[v]).map(|v| lengths[v]));
        if union > 0.0 {
            unique / union
        } else {
            0.0
        }
    });
    DistanceMatrix::from_upper(table.sample_ids().to_vec(), upper, Metric::UnweightedUnifrac)
}

/// Dispatch on `metric`. `Precomputed` cannot be derived from counts.
pub fn compute_distance(
    metric: Metric,
    table: &CountTable,
    tree: Option<&PhyloTree>,
    opts: DistanceOptions,
) -> Result<DistanceMatrix> {
    let need_tree = || {
        tree.ok_or_else(|| Error::invalid(format!("metric {metric} requires a phylogenetic tree")))
    };
    match metric {
        Metric::BrayCurtis => bray_curtis_with(table, opts.bray_curtis_proportions),
        Metric::Jaccard => jaccard(table),
        Metric::Euclidean => euclidean(table),
        Metric::WeightedUnifrac => weighted_unifrac(table, need_tree()?, opts.weighted_normalized),
        Metric::UnweightedUnifrac => unweighted_unifrac(table, need_tree()?),
        Metric::Precomputed => Err(Error::invalid("a precomputed matrix cannot be derived from counts")),
    }
}

/// Centered kernel, clipped to positive semi-definite when needed.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub sample_ids: Vec<String>,
    pub values: DMatrix<f64>,
    pub psd_corrected: bool,
}

/// Clip negative eigenvalues of a centered symmetric matrix. Returns the
/// matrix unchanged (and `false`) when its smallest eigenvalue is within
/// `1e-10 × max|λ|` of zero.
pub(crate) fn clip_to_psd(g: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = g.nrows();
    let eig = SymmetricEigen::new(g.clone());
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    if !(min < -1e-10 * max_abs) {
        return (g, false);
    }
    let clipped = eig.eigenvalues.map(|x| x.max(0.0));
    let v = &eig.eigenvectors;
    let mut k = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    // re-center and symmetrize so rows sum to zero to rounding
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] += grand - row_means[i] - row_means[j];
        }
    }
    let k = (&k + k.transpose()) * 0.5;
    (k, true)
}

pub fn distance_to_kernel(dist: &DistanceMatrix) -> Result<Kernel> {
    if dist.upper().iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("distance matrix has non-finite entries"));
    }
    let (values, psd_corrected) = clip_to_psd(gower_center(dist));
    Ok(Kernel {
        sample_ids: dist.sample_ids().to_vec(),
        values,
        psd_corrected,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Pcoa {
    pub sample_ids: Vec<String>,
    /// One row per sample, one column per kept axis.
    pub coordinates: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Percent of the positive-eigenvalue total carried by each axis.
    pub percent_explained: Vec<f64>,
    /// Axes with eigenvalue below `-tol`, left out of the embedding.
    pub negative_axes: usize,
    pub warnings: Vec<String>,
}

impl Pcoa {
    /// `sample_id<TAB>PC1<TAB>PC2...`, one row per sample.
    pub fn coordinates_tsv(&self) -> String {
        let mut out = String::from("sample_id");
        for a in 0..self.eigenvalues.len() {
            out.push_str(&format!("\tPC{}", a + 1));
        }
        out.push('\n');
        for (id, row) in self.sample_ids.iter().zip(&self.coordinates) {
            out.push_str(id);
            for x in row {
                out.push('\t');
                out.push_str(&format_sig17(*x));
            }
            out.push('\n');
        }
        out
    }

    pub fn eigenvalues_tsv(&self) -> String {
        let mut out = String::from("axis\teigenvalue\tpercent_explained\n");
        for (a, (l, p)) in self.eigenvalues.iter().zip(&self.percent_explained).enumerate() {
            out.push_str(&format!("PC{}\t{}\t{}\n", a + 1, format_sig17(*l), format_sig17(*p)));
        }
        out
    }
}

/// Principal coordinates: eigenvectors of Gower's centered matrix scaled by
/// the square roots of their eigenvalues, largest first.
pub fn pcoa(dist: &DistanceMatrix, k: usize) -> Result<Pcoa> {
    let n = dist.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 ≤ k ≤ {n}, got {k}")));
    }
    let eig = SymmetricEigen::new(gower_center(dist));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-10 * max_abs;
    let positive: Vec<usize> = order.iter().copied().filter(|&a| eig.eigenvalues[a] > tol).collect();
    let negative_axes = order.iter().filter(|&&a| eig.eigenvalues[a] < -tol).count();
    let mut warnings = Vec::new();
    if negative_axes > 0 {
        warnings.push(format!("{negative_axes} negative-eigenvalue axis/axes dropped"));
    }

    let positive_total: f64 = positive.iter().map(|&a| eig.eigenvalues[a]).sum();
    let axes: Vec<usize> = if positive.is_empty() {
        warnings.push("all samples coincide; returning a single zero axis".into());
        vec![order[0]]
    } else {
        if k > positive.len() {
            warnings.push(format!(
                "requested {k} axes but only {} have positive eigenvalues",
                positive.len()
            ));
        }
        positive.into_iter().take(k).collect()
    };

    let mut coordinates = vec![Vec::with_capacity(axes.len()); n];
    let mut eigenvalues = Vec::with_capacity(axes.len());
    let mut percent = Vec::with_capacity(axes.len());
    for &a in &axes {
        let lambda = eig.eigenvalues[a].max(0.0);
        let mut v: Vec<f64> = eig.eigenvectors.column(a).iter().copied().collect();
        // sign convention: first clearly non-zero component positive
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-8) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        let scale = lambda.sqrt();
        for (row, x) in coordinates.iter_mut().zip(&v) {
            row.push(x * scale);
        }
        eigenvalues.push(lambda);
        percent.push(if positive_total > 0.0 { 100.0 * lambda / positive_total } else { 0.0 });
    }
    Ok(Pcoa {
        sample_ids: dist.sample_ids().to_vec(),
        coordinates,
        eigenvalues,
        percent_explained: percent,
        negative_axes,
        warnings,
    })
}
