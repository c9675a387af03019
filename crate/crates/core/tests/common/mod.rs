//! Helpers shared by the integration tests: a random tree generator whose
//! structure is known without going through the parser, and direct
//! per-branch UniFrac sums to check the library against.

#![allow(dead_code)]

use leaveout::ingest::CountTable;
use rand::Rng;

/// Tree built bottom-up by random merges. Node `i < n_leaves` is leaf `L{i}`.
pub struct RandomTree {
    pub n_leaves: usize,
    pub children: Vec<Vec<usize>>,
    pub length: Vec<f64>,
    pub root: usize,
}

impl RandomTree {
    pub fn generate(rng: &mut impl Rng, n_leaves: usize) -> Self {
        let mut children = vec![Vec::new(); n_leaves];
        let mut length: Vec<f64> = (0..n_leaves).map(|_| rng.random_range(0.01..2.0)).collect();
        let mut pool: Vec<usize> = (0..n_leaves).collect();
        while pool.len() > 1 {
            // merge two or (sometimes) three subtrees into a new node
            let k = if pool.len() >= 3 && rng.random_bool(0.25) { 3 } else { 2 };
            let mut kids = Vec::new();
            for _ in 0..k {
                let i = rng.random_range(0..pool.len());
                kids.push(pool.swap_remove(i));
            }
            children.push(kids);
            length.push(rng.random_range(0.01..2.0));
            pool.push(children.len() - 1);
        }
        let root = pool[0];
        RandomTree { n_leaves, children, length, root }
    }

    pub fn label(i: usize) -> String {
        format!("L{i}")
    }

    pub fn to_newick(&self) -> String {
        fn go(t: &RandomTree, v: usize, out: &mut String) {
            if v < t.n_leaves {
                out.push_str(&RandomTree::label(v));
            } else {
                out.push('(');
                for (k, &c) in t.children[v].iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    go(t, c, out);
                }
                out.push(')');
            }
            if v != t.root {
                out.push_str(&format!(":{:?}", t.length[v]));
            }
        }
        let mut s = String::new();
        go(self, self.root, &mut s);
        s.push(';');
        s
    }

    /// Leaf indices below `v`.
    pub fn leaves_below(&self, v: usize) -> Vec<usize> {
        if v < self.n_leaves {
            return vec![v];
        }
        self.children[v].iter().flat_map(|&c| self.leaves_below(c)).collect()
    }

    /// Every non-root node with its branch length.
    pub fn branches(&self) -> Vec<(usize, f64)> {
        (0..self.children.len()).filter(|&v| v != self.root).map(|v| (v, self.length[v])).collect()
    }
}

/// Counts over leaves `L0..`, every sample with at least one read.
pub fn random_counts(rng: &mut impl Rng, n_samples: usize, n_leaves: usize) -> CountTable {
    let rows: Vec<Vec<u64>> = (0..n_samples)
        .map(|_| {
            let mut row: Vec<u64> = (0..n_leaves)
                .map(|_| if rng.random_bool(0.35) { 0 } else { rng.random_range(1..40) })
                .collect();
            if row.iter().all(|&c| c == 0) {
                row[rng.random_range(0..n_leaves)] = 1;
            }
            row
        })
        .collect();
    let ids = (0..n_samples).map(|i| format!("S{i}")).collect();
    let feats = (0..n_leaves).map(RandomTree::label).collect();
    CountTable::from_rows(ids, feats, &rows).unwrap()
}

fn fraction_below(tree: &RandomTree, row: &[u64], v: usize) -> f64 {
    let total: u64 = row.iter().sum();
    let part: u64 = tree.leaves_below(v).iter().map(|&l| row[l]).sum();
    part as f64 / total as f64
}

/// Σ_b l_b |p_A(b) − p_B(b)|, divided by Σ_b l_b (p_A(b) + p_B(b)) when
/// `normalized`.
pub fn weighted_oracle(tree: &RandomTree, a: &[u64], b: &[u64], normalized: bool) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (v, l) in tree.branches() {
        let (pa, pb) = (fraction_below(tree, a, v), fraction_below(tree, b, v));
        num += l * (pa - pb).abs();
        den += l * (pa + pb);
    }
    if normalized {
        num / den
    } else {
        num
    }
}

/// Length of branches under exactly one sample over branches under either.
pub fn unweighted_oracle(tree: &RandomTree, a: &[u64], b: &[u64]) -> f64 {
    let (mut unique, mut union) = (0.0, 0.0);
    for (v, l) in tree.branches() {
        let below = tree.leaves_below(v);
        let in_a = below.iter().any(|&x| a[x] > 0);
        let in_b = below.iter().any(|&x| b[x] > 0);
        if in_a || in_b {
            union += l;
        }
        if in_a != in_b {
            unique += l;
        }
    }
    if union > 0.0 {
        unique / union
    } else {
        0.0
    }
}

/// Multivariate one-way ANOVA on points: Σ_g n_g‖x̄_g − x̄‖² / Σ_i ‖x_i − x̄‖².
pub fn anova_r2(points: &[Vec<f64>], groups: &[usize]) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mean: Vec<f64> = (0..dim).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n as f64).collect();
    let total: f64 = points.iter().map(|p| (0..dim).map(|d| (p[d] - mean[d]).powi(2)).sum::<f64>()).sum();
    let n_groups = groups.iter().max().unwrap() + 1;
    let mut between = 0.0;
    for g in 0..n_groups {
        let members: Vec<&Vec<f64>> = points.iter().zip(groups).filter(|(_, &k)| k == g).map(|(p, _)| p).collect();
        let m = members.len() as f64;
        for d in 0..dim {
            let gm = members.iter().map(|p| p[d]).sum::<f64>() / m;
            between += m * (gm - mean[d]).powi(2);
        }
    }
    between / total
}
