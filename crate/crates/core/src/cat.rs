//! Conditional association test: how much of the global R² does a taxon
//! carry?
//!
//! For each requested taxon the counts of its leaf features are zeroed, the
//! distances are recomputed, and the drop in R² is bootstrapped by resampling
//! rows and columns of the two pre-computed distance matrices with one shared
//! index vector. The p-value is the share of bootstrap differences below zero
//! (ties count one half).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::betadiv::{clip_to_psd, compute_distance, DistanceMatrix, DistanceOptions, Metric};
use crate::error::{Error, Result};
use crate::ingest::{sorted_order, CountTable, Outcome, OutcomeValues};
use crate::numeric::{compensated_sum, format_sig17, sig17};
use crate::permanova::{gower_center_indexed, orthonormal_basis, projected_trace};
use crate::phylo::{PhyloTree, TaxonSet, TaxonTree};
use crate::rng::{substream, Domain, GENERATOR};

/// How R² is obtained from a distance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlobalTest {
    /// `tr(HG)/tr(G)` on the Gower-centered matrix.
    #[default]
    Permanova,
    /// Same ratio on the centered kernel after clipping negative
    /// eigenvalues, recomputed for every resampled submatrix.
    Kernel,
}

impl fmt::Display for GlobalTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GlobalTest::Permanova => "permanova",
            GlobalTest::Kernel => "kernel",
        })
    }
}

impl FromStr for GlobalTest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "permanova" => Ok(GlobalTest::Permanova),
            "kernel" | "mirkat" => Ok(GlobalTest::Kernel),
            _ => Err(Error::invalid(format!("unknown global test {s:?} (expected permanova or kernel)"))),
        }
    }
}

/// Inputs for one CAT run. The outcome must already be aligned to the
/// table's sample order.
pub struct CatRequest<'a> {
    pub table: &'a CountTable,
    /// Needed for the UniFrac metrics.
    pub phylogeny: Option<&'a PhyloTree>,
    /// Tree that defines the leaf set of each taxon.
    pub taxa_tree: &'a dyn TaxonTree,
    pub outcome: &'a Outcome,
    /// Each entry is tested on its own; a multi-member set zeroes the union
    /// of its members' leaves.
    pub taxa: Vec<TaxonSet>,
    pub metrics: Vec<Metric>,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub global_test: GlobalTest,
    pub distance_options: DistanceOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatResult {
    pub taxon: String,
    pub level: String,
    pub n_leaves: usize,
    #[serde(serialize_with = "sig17::serialize")]
    pub r2_original: f64,
    #[serde(serialize_with = "sig17::serialize")]
    pub r2_leaveout: f64,
    #[serde(serialize_with = "sig17::serialize")]
    pub r2_difference: f64,
    #[serde(serialize_with = "sig17::serialize")]
    pub p_value: f64,
    pub p_display: String,
    pub degenerate: bool,
    pub metric_used: String,
    pub global_test: GlobalTest,
    pub n_bootstrap: usize,
    pub n_redraws: usize,
    pub seed: u64,
    pub generator: &'static str,
    #[serde(serialize_with = "sig17::vec::serialize")]
    pub bootstrap_differences: Vec<f64>,
}

/// Copy of `table` with the columns of `leaves` set to zero.
pub fn zero_out_taxon(table: &CountTable, leaves: &BTreeSet<String>) -> Result<CountTable> {
    let mut columns = Vec::with_capacity(leaves.len());
    let mut unknown = Vec::new();
    for leaf in leaves {
        match table.feature_index(leaf) {
            Some(c) => columns.push(c),
            None => unknown.push(leaf.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Missing {
            kind: "features in the count table",
            ids: unknown,
        });
    }
    Ok(table.with_zeroed_columns(&columns))
}

/// Squared distances held densely for fast submatrix access.
struct Scorer {
    n: usize,
    sq: Vec<f64>,
}

impl Scorer {
    fn new(d: &DistanceMatrix) -> Self {
        let n = d.len();
        let mut sq = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = d.get(i, j);
                sq[i * n + j] = v * v;
                sq[j * n + i] = v * v;
            }
        }
        Scorer { n, sq }
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        self.sq[i * self.n + j].sqrt()
    }

    /// R² on the submatrix picked by `idx` against the orthonormal design
    /// basis `q` (first column the intercept). `None` when the submatrix
    /// carries no variation.
    fn r2(&self, idx: &[usize], q: &DMatrix<f64>, mode: GlobalTest) -> Option<f64> {
        match mode {
            GlobalTest::Permanova => {
                let m = idx.len();
                let mut total = Vec::with_capacity(m * (m - 1) / 2);
                for a in 0..m {
                    let row = &self.sq[idx[a] * self.n..(idx[a] + 1) * self.n];
                    for &ib in &idx[a + 1..] {
                        total.push(row[ib]);
                    }
                }
                let ss_total = compensated_sum(total) / m as f64;
                if !(ss_total > 0.0) {
                    return None;
                }
                // the intercept column lies in the kernel of the centering,
                // so each remaining column contributes q′(−½ d²)q directly
                let mut among = 0.0;
                let mut w = vec![0.0; m];
                for k in 1..q.ncols() {
                    let col = q.column(k);
                    for a in 0..m {
                        let row = &self.sq[idx[a] * self.n..(idx[a] + 1) * self.n];
                        w[a] = compensated_sum(idx.iter().zip(col.iter()).map(|(&ib, &qb)| row[ib] * qb));
                    }
                    among += -0.5 * compensated_sum(col.iter().zip(&w).map(|(qa, wa)| qa * wa));
                }
                Some(among / ss_total)
            }
            GlobalTest::Kernel => {
                let g = gower_center_indexed(self.n, |i, j| self.dist(i, j), idx);
                let (k, _) = clip_to_psd(g);
                let tr = k.trace();
                if !(tr > 0.0) {
                    return None;
                }
                Some(projected_trace(&k, q) / tr)
            }
        }
    }
}

/// Design matrix (intercept + outcome columns) for the rows in `idx`.
fn design_for(outcome: &Outcome, idx: &[usize]) -> DMatrix<f64> {
    let m = idx.len();
    match outcome.values() {
        OutcomeValues::Continuous(v) => DMatrix::from_fn(m, 2, |r, c| if c == 0 { 1.0 } else { v[idx[r]] }),
        OutcomeValues::Categorical { levels, codes } => {
            DMatrix::from_fn(m, levels.len(), |r, c| if c == 0 { 1.0 } else { (codes[idx[r]] == c) as u8 as f64 })
        }
    }
}

fn max_r2(scorers: &[Scorer], idx: &[usize], q: &DMatrix<f64>, mode: GlobalTest) -> Option<f64> {
    let mut best = f64::NEG_INFINITY;
    for s in scorers {
        best = best.max(s.r2(idx, q, mode)?);
    }
    Some(best)
}

/// Leave-out R²: a matrix without variation explains nothing.
fn max_r2_leaveout(scorers: &[Scorer], idx: &[usize], q: &DMatrix<f64>, mode: GlobalTest) -> f64 {
    scorers
        .iter()
        .map(|s| s.r2(idx, q, mode).unwrap_or(0.0))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One accepted bootstrap draw, shared by every taxon in the request.
struct Replicate {
    idx: Vec<usize>,
    q: DMatrix<f64>,
    r2: f64,
    redraws: usize,
}

fn draw_replicates(
    scorers: &[Scorer],
    outcome: &Outcome,
    sorted: &[usize],
    n_bootstrap: usize,
    seed: u64,
    mode: GlobalTest,
) -> Result<Vec<Replicate>> {
    let n = sorted.len();
    let cap = 10 * n_bootstrap;
    let reps: Vec<Option<Replicate>> = (0..n_bootstrap)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Domain::Bootstrap, i as u64);
            for redraws in 0..=cap {
                let idx: Vec<usize> = (0..n).map(|_| sorted[rng.random_range(0..n)]).collect();
                let Ok(q) = orthonormal_basis(&design_for(outcome, &idx)) else {
                    continue;
                };
                if let Some(r2) = max_r2(scorers, &idx, &q, mode) {
                    return Some(Replicate { idx, q, r2, redraws });
                }
            }
            None
        })
        .collect();
    let mut out = Vec::with_capacity(n_bootstrap);
    let mut total = 0;
    for r in reps {
        let r = r.ok_or_else(|| too_many_redraws(cap))?;
        total += r.redraws;
        out.push(r);
    }
    if total > cap {
        return Err(too_many_redraws(cap));
    }
    Ok(out)
}

fn too_many_redraws(cap: usize) -> Error {
    Error::Degenerate(format!(
        "more than {cap} bootstrap resamples had a constant outcome or no distance variation"
    ))
}

fn distances(req: &CatRequest<'_>, table: &CountTable) -> Result<Vec<DistanceMatrix>> {
    req.metrics
        .iter()
        .map(|&m| compute_distance(m, table, req.phylogeny, req.distance_options))
        .collect()
}

/// Display form of a p-value; zero is shown as the resolution limit.
pub fn p_display(p: f64, n_bootstrap: usize) -> String {
    if p == 0.0 {
        format!("< 1/{n_bootstrap}")
    } else {
        format!("{p}")
    }
}

/// Run the test for every taxon (or taxon set) in the request.
pub fn cat_test(req: &CatRequest<'_>) -> Result<Vec<CatResult>> {
    if req.n_bootstrap == 0 {
        return Err(Error::invalid("the number of bootstrap samples must be at least 1"));
    }
    if req.taxa.is_empty() {
        return Err(Error::invalid("no taxa to test"));
    }
    if req.metrics.is_empty() {
        return Err(Error::invalid("no distance metric given"));
    }
    if req.outcome.sample_ids() != req.table.sample_ids() {
        return Err(Error::invalid("outcome is not aligned to the count table"));
    }
    let mode = req.global_test;
    let n = req.table.n_samples();
    let all: Vec<usize> = (0..n).collect();
    let q_full = orthonormal_basis(&design_for(req.outcome, &all))
        .map_err(|_| Error::RankDeficient { columns: vec!["outcome".into()] })?;

    let d = distances(req, req.table)?;
    let scorers: Vec<Scorer> = d.iter().map(Scorer::new).collect();
    let r2_original = max_r2(&scorers, &all, &q_full, mode)
        .ok_or_else(|| Error::Degenerate("all samples are identical under the chosen metric".into()))?;
    let sorted = sorted_order(req.table.sample_ids());
    let replicates = draw_replicates(&scorers, req.outcome, &sorted, req.n_bootstrap, req.seed, mode)?;
    let n_redraws: usize = replicates.iter().map(|r| r.redraws).sum();
    let metric_used = if req.metrics.len() == 1 {
        req.metrics[0].tag().to_string()
    } else {
        "max-over-metrics".to_string()
    };

    let mut results = Vec::with_capacity(req.taxa.len());
    for set in &req.taxa {
        let tree_leaves = req.taxa_tree.leaf_set_of(set)?;
        let leaves: BTreeSet<String> = tree_leaves
            .into_iter()
            .filter(|l| req.table.feature_index(l).is_some())
            .collect();
        let zeroed = zero_out_taxon(req.table, &leaves)?;
        if zeroed.is_all_zero() {
            return Err(Error::Degenerate(format!("leaving out {set} removes every count")));
        }
        let d_star = distances(req, &zeroed)?;
        let unchanged = d.iter().zip(&d_star).all(|(a, b)| {
            a.upper().iter().zip(b.upper()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        let base = CatResult {
            taxon: set.to_string(),
            level: set.level(),
            n_leaves: leaves.len(),
            r2_original,
            r2_leaveout: r2_original,
            r2_difference: 0.0,
            p_value: 1.0,
            p_display: String::new(),
            degenerate: unchanged,
            metric_used: metric_used.clone(),
            global_test: mode,
            n_bootstrap: req.n_bootstrap,
            n_redraws,
            seed: req.seed,
            generator: GENERATOR,
            bootstrap_differences: vec![0.0; req.n_bootstrap],
        };
        if unchanged {
            log::warn!("leaving out {set} does not change any distance; reported as degenerate with p = 1");
            results.push(CatResult {
                p_display: p_display(1.0, req.n_bootstrap),
                ..base
            });
            continue;
        }
        let star: Vec<Scorer> = d_star.iter().map(Scorer::new).collect();
        let r2_leaveout = max_r2_leaveout(&star, &all, &q_full, mode);
        let diffs: Vec<f64> = replicates
            .par_iter()
            .map(|rep| rep.r2 - max_r2_leaveout(&star, &rep.idx, &rep.q, mode))
            .collect();
        let p_value = bootstrap_p(&diffs);
        results.push(CatResult {
            r2_leaveout,
            r2_difference: r2_original - r2_leaveout,
            p_value,
            p_display: p_display(p_value, req.n_bootstrap),
            bootstrap_differences: diffs,
            ..base
        });
    }
    Ok(results)
}

/// Share of negative differences, ties counted as one half.
pub fn bootstrap_p(diffs: &[f64]) -> f64 {
    let neg = diffs.iter().filter(|&&d| d < 0.0).count();
    let ties = diffs.iter().filter(|&&d| d == 0.0).count();
    (neg as f64 + 0.5 * ties as f64) / diffs.len() as f64
}

pub fn results_to_tsv(results: &[CatResult]) -> String {
    let mut out = String::from("level\ttaxon\tr2_original\tr2_leaveout\tr2_difference\tp_value\tdegenerate\tp_display\n");
    for r in results {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.level,
            r.taxon,
            format_sig17(r.r2_original),
            format_sig17(r.r2_leaveout),
            format_sig17(r.r2_difference),
            format_sig17(r.p_value),
            r.degenerate,
            r.p_display
        ));
    }
    out
}

pub fn results_to_json(results: &[CatResult]) -> String {
    serde_json::to_string_pretty(results).expect("serializable")
}

/// Two-sided rank-sum test comparing one taxon's per-sample relative
/// abundance between the two levels of a binary outcome.
pub fn mann_whitney(table: &CountTable, outcome: &Outcome, leaves: &BTreeSet<String>) -> Result<f64> {
    let OutcomeValues::Categorical { levels, codes } = outcome.values() else {
        return Err(Error::invalid("the rank-sum test needs a binary outcome"));
    };
    if levels.len() != 2 {
        return Err(Error::invalid("the rank-sum test needs a binary outcome"));
    }
    if outcome.sample_ids() != table.sample_ids() {
        return Err(Error::invalid("outcome is not aligned to the count table"));
    }
    let cols: Vec<usize> = leaves.iter().filter_map(|l| table.feature_index(l)).collect();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (s, &code) in codes.iter().enumerate() {
        let total = table.sample_total(s);
        let part: u64 = cols.iter().map(|&c| table.get(s, c)).sum();
        let prop = if total > 0 { part as f64 / total as f64 } else { 0.0 };
        if code == 0 {
            x.push(prop);
        } else {
            y.push(prop);
        }
    }
    rank_sum_p(&x, &y)
}

/// Exact null distribution without ties for up to 40 observations; normal
/// approximation with tie and continuity corrections otherwise.
pub fn rank_sum_p(x: &[f64], y: &[f64]) -> Result<f64> {
    let (n1, n2) = (x.len(), y.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid("rank-sum test: one group is empty"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::invalid("rank-sum test: NaN observation"));
    }
    let mut all: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_x += avg * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let u = rank_x - (n1 * (n1 + 1)) as f64 / 2.0;
    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);

    if tie_term == 0.0 && n <= 40 {
        let dist = exact_u_distribution(n1, n2);
        let total: f64 = dist.iter().sum();
        let u = u.round() as usize;
        let lower: f64 = dist[..=u].iter().sum::<f64>() / total;
        let upper: f64 = dist[u..].iter().sum::<f64>() / total;
        return Ok((2.0 * lower.min(upper)).min(1.0));
    }

    let mean = n1f * n2f / 2.0;
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if !(var > 0.0) {
        return Ok(1.0);
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("valid parameters");
    Ok((2.0 * normal.sf(z)).min(1.0))
}

/// Number of orderings giving each value of U for group sizes `m`, `n`.
fn exact_u_distribution(m: usize, n: usize) -> Vec<f64> {
    // table[a][b] is the distribution for a values in the first group and
    // b in the second; the largest element either belongs to the first
    // group (adding b to U) or to the second
    let mut table: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n + 1]; m + 1];
    for a in 0..=m {
        for b in 0..=n {
            table[a][b] = if a == 0 || b == 0 {
                vec![1.0]
            } else {
                let mut d = vec![0.0; a * b + 1];
                for (u, &c) in table[a - 1][b].iter().enumerate() {
                    d[u + b] += c;
                }
                for (u, &c) in table[a][b - 1].iter().enumerate() {
                    d[u] += c;
                }
                d
            };
        }
    }
    std::mem::take(&mut table[m][n])
}
