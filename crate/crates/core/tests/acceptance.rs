//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p leaveout --test acceptance` (release-like
//! optimization comes from the workspace test profile). Exits non-zero if
//! any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{anova_r2, random_counts, unweighted_oracle, weighted_oracle, RandomTree};
use leaveout::betadiv::{
    bray_curtis, euclidean, load_distance_matrix, parse_distance_matrix, pcoa, unweighted_unifrac, weighted_unifrac,
    DistanceMatrix, DistanceOptions, Metric,
};
use leaveout::cat::{cat_test, CatRequest, CatResult, GlobalTest};
use leaveout::ingest::{load_count_table, load_outcome, CountTable, Orientation, Outcome, OutcomeKind, Rank, TaxonomyAssignment};
use leaveout::permanova::{gower_center, hat_matrix, permanova, DesignMatrix};
use leaveout::phylo::{build_taxonomy_tree, load_newick, parse_newick, NewickOptions, TaxonRef, TaxonSet, TaxonomyTree};
use leaveout::rng::{substream, Domain};
use leaveout::simulate::{generate_replicate, load_scenario_config, Method, ScenarioReport, REJECTION_LEVEL};
use rand::Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/scenario")
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("S{i:02}")).collect()
}

fn c1_euclidean_anova() -> Verdict {
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let mut rng = substream(case, Domain::Test, 100);
        let n = rng.random_range(4..=12);
        let m = rng.random_range(1..=6);
        let n_groups = rng.random_range(2..=3.min(n / 2));
        let mut groups: Vec<usize> = (0..n).map(|i| i % n_groups).collect();
        for i in (1..n).rev() {
            groups.swap(i, rng.random_range(0..=i));
        }
        let rows: Vec<Vec<u64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0..50)).collect()).collect();
        let table = CountTable::from_rows(ids(n), (0..m).map(|j| format!("F{j}")).collect(), &rows).unwrap();
        let d = euclidean(&table).unwrap();
        if d.upper().iter().all(|&x| x == 0.0) {
            continue;
        }
        let labels: Vec<String> = groups.iter().map(|g| format!("g{g}")).collect();
        let outcome = Outcome::categorical(ids(n), &labels, OutcomeKind::Categorical).unwrap();
        let r2 = permanova(&d, &DesignMatrix::from_outcome(&outcome).unwrap(), 0, 0).unwrap().r_squared;
        let pts: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&c| c as f64).collect()).collect();
        worst = worst.max((r2 - anova_r2(&pts, &groups)).abs());
    }
    check(worst <= 1e-9, format!("max |R² - ANOVA R²| = {worst:.2e} (tol 1e-9)"))
}

fn c2_hand_fixtures() -> Verdict {
    let mut errs = Vec::new();
    let mut note = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-12 {
            errs.push(format!("{name}: {got} != {want}"));
        }
    };

    let d = DistanceMatrix::from_upper(ids(2), vec![1.0], Metric::Euclidean).unwrap();
    let g = gower_center(&d);
    for (i, j, want) in [(0, 0, 0.25), (0, 1, -0.25), (1, 0, -0.25), (1, 1, 0.25)] {
        note("gower", g[(i, j)], want);
    }

    let outcome = Outcome::categorical(ids(4), &["x", "x", "y", "y"], OutcomeKind::Binary).unwrap();
    let h = hat_matrix(&DesignMatrix::from_outcome(&outcome).unwrap()).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = if i / 2 == j / 2 { 0.5 } else { 0.0 };
            note("hat", h[(i, j)], want);
        }
    }

    let t = CountTable::from_rows(ids(2), vec!["A".into(), "B".into()], &[vec![2, 2], vec![1, 3]]).unwrap();
    note("bray-curtis", bray_curtis(&t).unwrap().get(0, 1), 0.25);

    let tree = parse_newick("(A:1,B:1);").unwrap();
    let t = CountTable::from_rows(ids(2), vec!["A".into(), "B".into()], &[vec![2, 2], vec![1, 3]]).unwrap();
    note("weighted unifrac", weighted_unifrac(&t, &tree, true).unwrap().get(0, 1), 0.25);

    let tree = parse_newick("((A:1,B:1):1,C:1);").unwrap();
    let feats = vec!["A".into(), "B".into(), "C".into()];
    let t = CountTable::from_rows(ids(2), feats, &[vec![1, 1, 0], vec![1, 0, 1]]).unwrap();
    note("unweighted unifrac", unweighted_unifrac(&t, &tree).unwrap().get(0, 1), 0.5);

    if errs.is_empty() {
        check(true, "gower, hat, bray-curtis, weighted and unweighted unifrac (tol 1e-12)")
    } else {
        check(false, errs.join("; "))
    }
}

fn c3_unifrac_oracle() -> Verdict {
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = substream(case, Domain::Test, 300);
        let n_leaves = rng.random_range(2..=8);
        let tree = RandomTree::generate(&mut rng, n_leaves);
        let phylo = parse_newick(&tree.to_newick()).unwrap();
        let n_samples = rng.random_range(2..=6);
        let table = random_counts(&mut rng, n_samples, n_leaves);
        let w = weighted_unifrac(&table, &phylo, true).unwrap();
        let raw = weighted_unifrac(&table, &phylo, false).unwrap();
        let u = unweighted_unifrac(&table, &phylo).unwrap();
        for i in 0..n_samples {
            for j in 0..n_samples {
                let (a, b) = (table.row(i), table.row(j));
                worst = worst
                    .max((w.get(i, j) - weighted_oracle(&tree, a, b, true)).abs())
                    .max((raw.get(i, j) - weighted_oracle(&tree, a, b, false)).abs())
                    .max((u.get(i, j) - unweighted_oracle(&tree, a, b)).abs());
            }
        }
    }
    check(worst <= 1e-12, format!("100 trees, max deviation {worst:.2e} (tol 1e-12)"))
}

fn family_tree(families: &[(&str, &[&str])]) -> TaxonomyTree {
    let mut a = Vec::new();
    for (fam, feats) in families {
        for f in *feats {
            a.push(TaxonomyAssignment {
                feature_id: f.to_string(),
                lineage: vec![(Rank::Kingdom, "Bacteria".into()), (Rank::Family, fam.to_string())],
            });
        }
    }
    build_taxonomy_tree(&a).unwrap()
}

fn family(name: &str) -> TaxonSet {
    TaxonSet::single(TaxonRef::Named {
        rank: Rank::Family,
        name: name.into(),
    })
}

/// Feature `sig` carries the whole group difference; `noise` is independent
/// of the groups; `flat1`/`flat2` are constant; `ghost` is always zero.
fn separation_fixture(n_per_group: usize) -> (CountTable, Outcome) {
    let n = 2 * n_per_group;
    let mut rng = substream(7, Domain::Test, 500);
    let rows: Vec<Vec<u64>> = (0..n)
        .map(|s| {
            let signal = if s < n_per_group { 5 } else { 60 } + rng.random_range(0..3);
            vec![signal, rng.random_range(0..8), 10, 10, 0]
        })
        .collect();
    let feats = ["sig", "noise", "flat1", "flat2", "ghost"].map(String::from).to_vec();
    let table = CountTable::from_rows(ids(n), feats, &rows).unwrap();
    let labels: Vec<&str> = (0..n).map(|s| if s < n_per_group { "a" } else { "b" }).collect();
    let outcome = Outcome::categorical(ids(n), &labels, OutcomeKind::Binary).unwrap();
    (table, outcome)
}

fn separation_taxonomy() -> TaxonomyTree {
    family_tree(&[("Sig", &["sig"]), ("Noise", &["noise"]), ("Flat", &["flat1", "flat2"]), ("Empty", &["ghost"])])
}

fn run_in_pool(threads: usize, f: impl FnOnce() -> Vec<CatResult> + Send) -> Vec<CatResult> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn c4_degeneracy_and_determinism() -> Verdict {
    let (table, outcome) = separation_fixture(8);
    let tax = separation_taxonomy();
    let mut problems = Vec::new();
    for metric in [Metric::BrayCurtis, Metric::Jaccard, Metric::Euclidean] {
        let req = CatRequest {
            table: &table,
            phylogeny: None,
            taxa_tree: &tax,
            outcome: &outcome,
            taxa: vec![family("Empty")],
            metrics: vec![metric],
            n_bootstrap: 100,
            seed: 3,
            global_test: GlobalTest::Permanova,
            distance_options: DistanceOptions::default(),
        };
        let r = &cat_test(&req).unwrap()[0];
        if !(r.degenerate && r.p_value == 1.0) {
            problems.push(format!("{metric}: degenerate={} p={}", r.degenerate, r.p_value));
        }
    }

    // a simulated replicate from the bundled scenario, all tested taxa
    let cfg = load_scenario_config(scenario_dir().join("high.conf")).unwrap();
    let scenario = cfg.scenarios().unwrap().remove(0);
    let rep = generate_replicate(&scenario, 0).unwrap();
    let taxa = scenario.tested_taxa().unwrap();
    let metrics = vec![Metric::WeightedUnifrac, Metric::BrayCurtis];
    let run = || {
        cat_test(&CatRequest {
            table: &rep.table,
            phylogeny: scenario.phylogeny.as_ref(),
            taxa_tree: &scenario.taxonomy,
            outcome: &rep.outcome,
            taxa: taxa.clone(),
            metrics: metrics.clone(),
            n_bootstrap: 200,
            seed: 42,
            global_test: GlobalTest::Permanova,
            distance_options: DistanceOptions::default(),
        })
        .unwrap()
    };
    let one = run_in_pool(1, run);
    for threads in [2, 8] {
        let other = run_in_pool(threads, run);
        let same = one.len() == other.len()
            && one.iter().zip(&other).all(|(a, b)| {
                a == b
                    && a.bootstrap_differences.iter().map(|x| x.to_bits()).eq(b.bootstrap_differences.iter().map(|x| x.to_bits()))
                    && a.p_value.to_bits() == b.p_value.to_bits()
                    && a.r2_difference.to_bits() == b.r2_difference.to_bits()
            });
        if !same {
            problems.push(format!("results differ between 1 and {threads} threads"));
        }
    }
    if problems.is_empty() {
        check(true, format!("ghost taxon degenerate with p = 1; {} results bit-identical on 1/2/8 threads", one.len()))
    } else {
        check(false, problems.join("; "))
    }
}

fn c5_full_separation() -> Verdict {
    let (table, outcome) = separation_fixture(15);
    let tax = separation_taxonomy();
    let req = CatRequest {
        table: &table,
        phylogeny: None,
        taxa_tree: &tax,
        outcome: &outcome,
        taxa: vec![family("Sig"), family("Noise")],
        metrics: vec![Metric::BrayCurtis],
        n_bootstrap: 500,
        seed: 0,
        global_test: GlobalTest::Permanova,
        distance_options: DistanceOptions::default(),
    };
    let res = cat_test(&req).unwrap();
    let (sig, noise) = (&res[0], &res[1]);
    check(
        sig.p_value == 0.0 && sig.p_display == "< 1/500" && noise.p_value >= 0.5,
        format!("signal p = {} ({}), sibling p = {}", sig.p_value, sig.p_display, noise.p_value),
    )
}

fn cat_only_report(conf: &str) -> ScenarioReport {
    let mut cfg = load_scenario_config(scenario_dir().join(conf)).unwrap();
    cfg.methods = vec![Method::Cat];
    cfg.run().unwrap()
}

const SPIKED: &str = "family:Lachnospiraceae";

fn c6_null_calibration() -> Verdict {
    let report = cat_only_report("null.conf");
    let row = report.rejection.iter().find(|r| r.method == Method::Cat && r.taxon == SPIKED).unwrap();
    let rate = row.rate();
    check(rate <= 0.10, format!("rejection {}/{} = {rate:.3} (limit 0.10)", row.n_rejected, row.n_replicates))
}

fn c7_power() -> Verdict {
    let report = cat_only_report("sweep.conf");
    let rates: Vec<(f64, f64)> = report
        .rejection
        .iter()
        .filter(|r| r.method == Method::Cat && r.taxon == SPIKED)
        .map(|r| (r.lambda, r.rate()))
        .collect();
    let drops: Vec<f64> = rates.windows(2).map(|w| w[0].1 - w[1].1).filter(|&d| d > 0.0).collect();
    let monotone = drops.len() <= 1 && drops.iter().all(|&d| d <= 0.05);
    let top = rates.last().map_or(0.0, |r| r.1);
    let shown: Vec<String> = rates.iter().map(|(l, r)| format!("{l}:{r:.3}")).collect();
    check(
        monotone && top >= 0.9 && rates.len() == 5,
        format!("rates {} (at most one drop ≤ 0.05; top ≥ 0.9)", shown.join(" ")),
    )
}

/// Weighted-UniFrac PERMANOVA on a user-supplied cohort, when present.
fn c7_real_data() -> Option<Verdict> {
    let dir = PathBuf::from(std::env::var_os("LEAVEOUT_MELANOMA_DIR")?);
    let column = std::env::var("LEAVEOUT_MELANOMA_OUTCOME").unwrap_or_else(|_| "response".into());
    let run = || -> leaveout::Result<f64> {
        let outcome = load_outcome(dir.join("metadata.tsv"), &column, OutcomeKind::Categorical)?;
        let dist = if dir.join("distance.tsv").exists() {
            load_distance_matrix(dir.join("distance.tsv"))?
        } else {
            let table = load_count_table(dir.join("table.tsv"), Orientation::FeaturesAsRows)?;
            let tree = load_newick(dir.join("tree.nwk"), NewickOptions::default())?;
            weighted_unifrac(&table, &tree, true)?
        };
        let outcome = outcome.align_to(dist.sample_ids())?;
        let res = permanova(&dist, &DesignMatrix::from_outcome(&outcome)?, 9999, 0)?;
        Ok(res.p_value.unwrap_or(1.0))
    };
    Some(match run() {
        Ok(p) => check(p < 0.001, format!("weighted-UniFrac PERMANOVA p = {p} (limit < 0.001)")),
        Err(e) => check(false, format!("could not run on {}: {e}", dir.display())),
    })
}

fn c8_permanova_calibration() -> Verdict {
    let mut cfg = load_scenario_config(scenario_dir().join("null.conf")).unwrap();
    cfg.n_per_group = 10;
    cfg.n_replicates = 500;
    let scenario = cfg.scenarios().unwrap().remove(0);
    let rejected: usize = (0..500)
        .map(|r| {
            let rep = generate_replicate(&scenario, r).unwrap();
            let d = bray_curtis(&rep.table).unwrap();
            let design = DesignMatrix::from_outcome(&rep.outcome).unwrap();
            let p = permanova(&d, &design, 999, r as u64).unwrap().p_value.unwrap();
            usize::from(p < REJECTION_LEVEL)
        })
        .sum();
    let rate = rejected as f64 / 500.0;
    check((0.03..=0.07).contains(&rate), format!("rejection {rejected}/500 = {rate:.3} (range [0.03, 0.07])"))
}

fn c9_pcoa_round_trip() -> Verdict {
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let mut rng = substream(case, Domain::Test, 900);
        let n = rng.random_range(3..=15);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))).collect();
        let mut text = format!("\t{}\n", ids(n).join("\t"));
        for i in 0..n {
            text.push_str(&format!("S{i:02}"));
            for j in 0..n {
                let r = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                text.push_str(&format!("\t{r:?}"));
            }
            text.push('\n');
        }
        let d = parse_distance_matrix(text.as_bytes()).unwrap();
        let p = pcoa(&d, 2).unwrap();
        for i in 0..n {
            for j in 0..n {
                let r = p.coordinates[i].iter().zip(&p.coordinates[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                worst = worst.max((r - d.get(i, j)).abs());
            }
        }
    }
    check(worst <= 1e-9, format!("50 point sets, max distance error {worst:.2e} (tol 1e-9)"))
}

type Criterion = (&'static str, &'static str, Option<Duration>, fn() -> Verdict);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("C1", "Euclidean PERMANOVA R² equals ANOVA R²", Some(Duration::from_secs(5)), c1_euclidean_anova),
        ("C2", "hand-computed fixtures", None, c2_hand_fixtures),
        ("C3", "UniFrac matches per-branch oracle", Some(Duration::from_secs(10)), c3_unifrac_oracle),
        ("C4", "CAT degeneracy and thread determinism", None, c4_degeneracy_and_determinism),
        ("C5", "CAT full separation, B = 500", Some(Duration::from_secs(30)), c5_full_separation),
        ("C6", "CAT null calibration", Some(Duration::from_secs(600)), c6_null_calibration),
        ("C7", "CAT power is monotone in lambda", None, c7_power),
        ("C8", "PERMANOVA permutation calibration", Some(Duration::from_secs(120)), c8_permanova_calibration),
        ("C9", "PCoA recovers planar distances", None, c9_pcoa_round_trip),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let mut out = run();
        let took = start.elapsed();
        if let Some(limit) = budget {
            if took > limit {
                out.passed = false;
                out.detail.push_str(&format!("; took {took:.1?}, budget {limit:?}"));
            }
        }
        let tag = if out.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!out.passed);
        println!("[{tag}] {id} {name}: {} ({took:.2?})", out.detail);
        if id == "C7" {
            match c7_real_data() {
                Some(o) => {
                    failed += usize::from(!o.passed);
                    println!("[{}] C7b cohort PERMANOVA: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
                }
                None => println!("[SKIP] C7b cohort PERMANOVA: LEAVEOUT_MELANOMA_DIR not set"),
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
