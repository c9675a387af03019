//! Spike-in simulation: Dirichlet-multinomial samples drawn around a
//! template's marginal composition, Poisson counts added to one taxon's
//! leaves in the second group, and rejection rates collected over many
//! replicates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use rayon::prelude::*;

use crate::betadiv::{DistanceOptions, Metric};
use crate::cat::{cat_test, mann_whitney, CatRequest, GlobalTest};
use crate::error::{Error, Result};
use crate::ingest::{load_count_table, load_taxonomy, match_taxonomy, CountTable, Orientation, Outcome, OutcomeKind};
use crate::numeric::format_sig17;
use crate::phylo::{build_taxonomy_tree, load_newick, NewickOptions, PhyloTree, TaxonRef, TaxonSet, TaxonTree, TaxonomyNode, TaxonomyTree};
use crate::rng::{derive_seed, substream, Domain};

pub const REJECTION_LEVEL: f64 = 0.05;

/// Marginal composition of the template: column sums over the grand total.
pub fn fit_template_proportions(template: &CountTable) -> Result<Vec<f64>> {
    let sums = template.column_sums();
    let total: u128 = sums.iter().map(|&s| s as u128).sum();
    if total == 0 {
        return Err(Error::invalid("template table has no counts"));
    }
    Ok(sums.iter().map(|&s| s as f64 / total as f64).collect())
}

/// One Dirichlet-multinomial draw of `depth` reads. Features with zero
/// proportion are left out of the Dirichlet and get no reads.
pub fn sample_dirichlet_multinomial(proportions: &[f64], alpha_sum: f64, depth: u64, rng: &mut impl Rng) -> Result<Vec<u64>> {
    if !(alpha_sum > 0.0) || !alpha_sum.is_finite() {
        return Err(Error::invalid("alpha_sum must be positive and finite"));
    }
    if proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid("proportions must be finite and non-negative"));
    }
    if !proportions.iter().any(|&p| p > 0.0) {
        return Err(Error::invalid("all proportions are zero"));
    }
    let mut weights = vec![0.0; proportions.len()];
    for (w, &p) in weights.iter_mut().zip(proportions) {
        if p > 0.0 {
            let gamma = Gamma::new(alpha_sum * p, 1.0).map_err(|e| Error::invalid(format!("gamma parameters: {e}")))?;
            *w = gamma.sample(rng);
        }
    }
    let mut total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        // every gamma draw underflowed; fall back to the expected composition
        weights.copy_from_slice(proportions);
        total = weights.iter().sum();
    }
    multinomial(&weights, total, depth, rng)
}

/// Multinomial by sequential conditional binomials.
fn multinomial(weights: &[f64], total: f64, depth: u64, rng: &mut impl Rng) -> Result<Vec<u64>> {
    let mut out = vec![0u64; weights.len()];
    let mut left = depth;
    let mut mass = total;
    let last = weights.iter().rposition(|&w| w > 0.0).expect("some weight is positive");
    for (k, &w) in weights.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k == last {
            out[k] = left;
            break;
        }
        if w <= 0.0 {
            continue;
        }
        let p = (w / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(left, p).map_err(|e| Error::invalid(format!("binomial parameters: {e}")))?.sample(rng);
        out[k] = draw;
        left -= draw;
        mass -= w;
    }
    Ok(out)
}

/// Add an independent Poisson(`lambda`) count to each feature in `leaves`.
pub fn spike_in(counts: &[u64], leaves: &[usize], lambda: f64, rng: &mut impl Rng) -> Result<Vec<u64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be finite and non-negative"));
    }
    let mut out = counts.to_vec();
    if lambda == 0.0 {
        return Ok(out);
    }
    let poisson = Poisson::new(lambda).map_err(|e| Error::invalid(format!("poisson parameter: {e}")))?;
    for &leaf in leaves {
        out[leaf] += poisson.sample(rng) as u64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Cat,
    MannWhitney,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Cat => "cat",
            Method::MannWhitney => "mann-whitney",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cat" => Ok(Method::Cat),
            "mann-whitney" | "mw" => Ok(Method::MannWhitney),
            _ => Err(Error::invalid(format!("unknown method {s:?} (expected cat or mann-whitney)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimScenario {
    pub template: CountTable,
    pub taxonomy: TaxonomyTree,
    pub phylogeny: Option<PhyloTree>,
    pub spike_taxon: TaxonRef,
    pub lambda: f64,
    pub n_per_group: usize,
    pub depth: u64,
    pub alpha_sum: f64,
    pub n_replicates: usize,
    pub seed: u64,
    pub n_bootstrap: usize,
    pub metrics: Vec<Metric>,
    pub global_test: GlobalTest,
    /// Defaults to the spiked taxon, its parent and its child taxa.
    pub test_taxa: Option<Vec<TaxonSet>>,
}

impl SimScenario {
    fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("depth must be at least 1"));
        }
        if !(self.alpha_sum > 0.0) {
            return Err(Error::invalid("alpha_sum must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if self.n_per_group < 2 {
            return Err(Error::invalid("n_per_group must be at least 2"));
        }
        if self.n_replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        Ok(())
    }

    /// Column indices of the spiked taxon's leaves in the template.
    pub fn spiked_columns(&self) -> Result<Vec<usize>> {
        let node = self.taxonomy.resolve(&self.spike_taxon)?;
        let leaves = self.taxonomy.leaf_set(node);
        let cols: Vec<usize> = leaves.iter().filter_map(|l| self.template.feature_index(l)).collect();
        if cols.is_empty() {
            return Err(Error::invalid(format!("spike taxon {} has no features in the template", self.spike_taxon)));
        }
        Ok(cols)
    }

    /// The spiked taxon, then its parent (unless the root), then its child
    /// taxa.
    pub fn tested_taxa(&self) -> Result<Vec<TaxonSet>> {
        if let Some(t) = &self.test_taxa {
            return Ok(t.clone());
        }
        let node = self.taxonomy.resolve(&self.spike_taxon)?;
        let mut out = vec![TaxonSet::single(self.taxonomy.reference(node))];
        if let Some(p) = self.taxonomy.parent(node) {
            if !matches!(self.taxonomy.node(p), TaxonomyNode::Root) {
                out.push(TaxonSet::single(self.taxonomy.reference(p)));
            }
        }
        for &c in self.taxonomy.children(node) {
            if matches!(self.taxonomy.node(c), TaxonomyNode::Taxon { .. }) {
                out.push(TaxonSet::single(self.taxonomy.reference(c)));
            }
        }
        Ok(out)
    }
}

/// One simulated dataset.
#[derive(Debug, Clone)]
pub struct SimReplicate {
    pub table: CountTable,
    pub outcome: Outcome,
    pub truth: BTreeSet<String>,
}

/// Draw replicate `r`. The compositional draws depend only on
/// `(seed, r)`, so the same baseline is reused across values of lambda.
pub fn generate_replicate(scenario: &SimScenario, r: usize) -> Result<SimReplicate> {
    scenario.validate()?;
    let props = fit_template_proportions(&scenario.template)?;
    let spiked = scenario.spiked_columns()?;
    let mut dm = substream(scenario.seed, Domain::DirichletMultinomial, r as u64);
    let mut sp = substream(scenario.seed, Domain::SpikeIn, r as u64);
    let n = scenario.n_per_group;
    let mut ids = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    let mut counts = Vec::with_capacity(2 * n * props.len());
    for group in 0..2 {
        for i in 0..n {
            let base = sample_dirichlet_multinomial(&props, scenario.alpha_sum, scenario.depth, &mut dm)?;
            let row = if group == 1 {
                spike_in(&base, &spiked, scenario.lambda, &mut sp)?
            } else {
                base
            };
            counts.extend(row);
            ids.push(format!("{}{:03}", if group == 0 { "ctl" } else { "spk" }, i));
            labels.push(if group == 0 { "control" } else { "spiked" });
        }
    }
    let table = CountTable::new(ids.clone(), scenario.template.feature_ids().to_vec(), counts)?;
    let outcome = Outcome::categorical(ids, &labels, OutcomeKind::Binary)?;
    let truth = spiked.iter().map(|&c| scenario.template.feature_ids()[c].clone()).collect();
    Ok(SimReplicate { table, outcome, truth })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionRow {
    pub lambda: f64,
    pub method: Method,
    pub level: String,
    pub taxon: String,
    pub spiked: bool,
    pub n_replicates: usize,
    pub n_rejected: usize,
}

impl RejectionRow {
    pub fn rate(&self) -> f64 {
        self.n_rejected as f64 / self.n_replicates as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct R2Pair {
    pub lambda: f64,
    pub replicate: usize,
    pub level: String,
    pub taxon: String,
    pub r2_original: f64,
    pub r2_leaveout: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioReport {
    pub rejection: Vec<RejectionRow>,
    pub r2_pairs: Vec<R2Pair>,
}

impl ScenarioReport {
    /// Rejection rate for a method and taxon (first matching row).
    pub fn rate(&self, method: Method, taxon: &str) -> Option<f64> {
        self.rejection
            .iter()
            .find(|r| r.method == method && r.taxon == taxon)
            .map(RejectionRow::rate)
    }

    pub fn extend(&mut self, other: ScenarioReport) {
        self.rejection.extend(other.rejection);
        self.r2_pairs.extend(other.r2_pairs);
    }

    pub fn rejection_tsv(&self) -> String {
        let mut out = String::from("lambda\tmethod\tlevel\ttaxon\tspiked\tn_replicates\tn_rejected\trejection_rate\n");
        for r in &self.rejection {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.lambda,
                r.method.tag(),
                r.level,
                r.taxon,
                r.spiked,
                r.n_replicates,
                r.n_rejected,
                format_sig17(r.rate())
            ));
        }
        out
    }

    pub fn r2_pairs_tsv(&self) -> String {
        let mut out = String::from("lambda\treplicate\tlevel\ttaxon\tr2_original\tr2_leaveout\tr2_difference\tp_value\n");
        for p in &self.r2_pairs {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                p.lambda,
                p.replicate,
                p.level,
                p.taxon,
                format_sig17(p.r2_original),
                format_sig17(p.r2_leaveout),
                format_sig17(p.r2_original - p.r2_leaveout),
                format_sig17(p.p_value)
            ));
        }
        out
    }
}

struct ReplicateOutput {
    /// p-values indexed `[method][taxon]`.
    p: Vec<Vec<f64>>,
    pairs: Vec<R2Pair>,
}

/// Run every replicate of `scenario` with each of `methods` on each tested
/// taxon.
pub fn run_scenario(scenario: &SimScenario, methods: &[Method]) -> Result<ScenarioReport> {
    scenario.validate()?;
    if methods.is_empty() {
        return Err(Error::invalid("no methods selected"));
    }
    let taxa = scenario.tested_taxa()?;
    let spiked_ref = TaxonSet::single(scenario.spike_taxon.clone());
    let leaf_sets: Vec<BTreeSet<String>> = taxa.iter().map(|t| scenario.taxonomy.leaf_set_of(t)).collect::<Result<_>>()?;

    let outputs: Vec<ReplicateOutput> = (0..scenario.n_replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, methods, &taxa, &leaf_sets, r))
        .collect::<Result<_>>()?;

    let mut report = ScenarioReport::default();
    for (mi, &method) in methods.iter().enumerate() {
        for (ti, t) in taxa.iter().enumerate() {
            let n_rejected = outputs.iter().filter(|o| o.p[mi][ti] < REJECTION_LEVEL).count();
            report.rejection.push(RejectionRow {
                lambda: scenario.lambda,
                method,
                level: t.level(),
                taxon: t.to_string(),
                spiked: scenario.taxonomy.leaf_set_of(t)? == scenario.taxonomy.leaf_set_of(&spiked_ref)?,
                n_replicates: scenario.n_replicates,
                n_rejected,
            });
        }
    }
    report.r2_pairs = outputs.into_iter().flat_map(|o| o.pairs).collect();
    Ok(report)
}

fn run_replicate(
    scenario: &SimScenario,
    methods: &[Method],
    taxa: &[TaxonSet],
    leaf_sets: &[BTreeSet<String>],
    r: usize,
) -> Result<ReplicateOutput> {
    let rep = generate_replicate(scenario, r)?;
    let mut p = Vec::with_capacity(methods.len());
    let mut pairs = Vec::new();
    for &method in methods {
        match method {
            Method::Cat => {
                let req = CatRequest {
                    table: &rep.table,
                    phylogeny: scenario.phylogeny.as_ref(),
                    taxa_tree: &scenario.taxonomy,
                    outcome: &rep.outcome,
                    taxa: taxa.to_vec(),
                    metrics: scenario.metrics.clone(),
                    n_bootstrap: scenario.n_bootstrap,
                    seed: derive_seed(scenario.seed, r as u64),
                    global_test: scenario.global_test,
                    distance_options: DistanceOptions::default(),
                };
                let results = cat_test(&req)?;
                p.push(results.iter().map(|c| c.p_value).collect());
                pairs.extend(results.into_iter().map(|c| R2Pair {
                    lambda: scenario.lambda,
                    replicate: r,
                    level: c.level,
                    taxon: c.taxon,
                    r2_original: c.r2_original,
                    r2_leaveout: c.r2_leaveout,
                    p_value: c.p_value,
                }));
            }
            Method::MannWhitney => {
                p.push(
                    leaf_sets
                        .iter()
                        .map(|leaves| mann_whitney(&rep.table, &rep.outcome, leaves))
                        .collect::<Result<_>>()?,
                );
            }
        }
    }
    Ok(ReplicateOutput { p, pairs })
}

/// Settings read from a `key = value` scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub template: PathBuf,
    pub orientation: Orientation,
    pub taxonomy: PathBuf,
    pub tree: Option<PathBuf>,
    pub taxon: TaxonRef,
    pub lambdas: Vec<f64>,
    pub n_bootstrap: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub n_per_group: usize,
    pub depth: u64,
    pub alpha_sum: f64,
    /// Weighted UniFrac when a tree is given, Bray-Curtis otherwise.
    pub metrics: Vec<Metric>,
    pub methods: Vec<Method>,
    pub global_test: GlobalTest,
    pub test_taxa: Option<Vec<TaxonSet>>,
}

const CONFIG_KEYS: &[&str] = &[
    "template",
    "orientation",
    "taxonomy",
    "tree",
    "taxon",
    "lambda",
    "bootstrap",
    "replicates",
    "seed",
    "n_per_group",
    "depth",
    "alpha_sum",
    "metric",
    "methods",
    "global_test",
    "test_taxa",
];

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split([',', ' ', '\t']).filter(|s| !s.is_empty())
}

/// Parse a scenario file. Relative paths are resolved against `base_dir`.
/// `#` starts a comment; blank lines are ignored.
pub fn parse_scenario_config(text: &str, base_dir: &Path) -> Result<ScenarioConfig> {
    let mut entries: BTreeMap<&str, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config {
                line: line_no,
                message: format!("expected `key = value`, found {line:?}"),
            });
        };
        let key = key.trim();
        let Some(&known) = CONFIG_KEYS.iter().find(|k| **k == key) else {
            return Err(Error::Config {
                line: line_no,
                message: format!("unknown key `{key}`"),
            });
        };
        if entries.insert(known, (line_no, value.trim().to_string())).is_some() {
            return Err(Error::Config {
                line: line_no,
                message: format!("key `{key}` given twice"),
            });
        }
    }

    fn parsed<T: FromStr>(entries: &BTreeMap<&str, (usize, String)>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match entries.get(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|e: T::Err| Error::Config {
                line: *line,
                message: format!("{key}: {e}"),
            }),
        }
    }
    let required = |key: &str| -> Result<&(usize, String)> {
        match entries.get(key) {
            Some(e) if !e.1.is_empty() => Ok(e),
            _ => Err(Error::MissingKey(key.to_string())),
        }
    };
    let path = |v: &str| -> PathBuf {
        let p = Path::new(v);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    let with_line = |line: usize, key: &str, e: Error| Error::Config {
        line,
        message: format!("{key}: {e}"),
    };

    let template = path(&required("template")?.1);
    let taxonomy = path(&required("taxonomy")?.1);
    let tree = entries.get("tree").filter(|e| !e.1.is_empty()).map(|e| path(&e.1));
    let (line, taxon) = required("taxon")?;
    let taxon: TaxonRef = taxon.parse().map_err(|e| with_line(*line, "taxon", e))?;
    let (line, lambda) = required("lambda")?;
    let lambdas = list(lambda)
        .map(|v| match v.parse::<f64>() {
            Ok(x) if x >= 0.0 && x.is_finite() => Ok(x),
            _ => Err(Error::Config {
                line: *line,
                message: format!("lambda: {v:?} is not a non-negative number"),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    if lambdas.is_empty() {
        return Err(Error::MissingKey("lambda".into()));
    }
    let metrics = match entries.get("metric") {
        Some((line, v)) => list(v).map(|m| m.parse().map_err(|e| with_line(*line, "metric", e))).collect::<Result<Vec<Metric>>>()?,
        None if tree.is_some() => vec![Metric::WeightedUnifrac],
        None => vec![Metric::BrayCurtis],
    };
    let methods = match entries.get("methods") {
        Some((line, v)) => list(v).map(|m| m.parse().map_err(|e| with_line(*line, "methods", e))).collect::<Result<Vec<Method>>>()?,
        None => vec![Method::Cat],
    };
    let test_taxa = match entries.get("test_taxa") {
        Some((line, v)) => Some(
            list(v)
                .map(|t| t.parse().map_err(|e| with_line(*line, "test_taxa", e)))
                .collect::<Result<Vec<TaxonSet>>>()?,
        ),
        None => None,
    };
    let config = ScenarioConfig {
        template,
        orientation: parsed(&entries, "orientation", Orientation::FeaturesAsRows)?,
        taxonomy,
        tree,
        taxon,
        lambdas,
        n_bootstrap: parsed(&entries, "bootstrap", 1000)?,
        n_replicates: parsed(&entries, "replicates", 200)?,
        seed: parsed(&entries, "seed", 0)?,
        n_per_group: parsed(&entries, "n_per_group", 31)?,
        depth: parsed(&entries, "depth", 2000)?,
        alpha_sum: parsed(&entries, "alpha_sum", 62.0)?,
        metrics,
        methods,
        global_test: parsed(&entries, "global_test", GlobalTest::Permanova)?,
        test_taxa,
    };
    if config.metrics.is_empty() || config.methods.is_empty() {
        return Err(Error::invalid("metric and methods lists must not be empty"));
    }
    Ok(config)
}

pub fn load_scenario_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let bytes = crate::error::read_file(path)?;
    let text = crate::error::decode_utf8(&bytes)?;
    parse_scenario_config(text, path.parent().unwrap_or(Path::new(".")))
}

impl ScenarioConfig {
    /// Load the referenced files and build one scenario per lambda.
    pub fn scenarios(&self) -> Result<Vec<SimScenario>> {
        let template = load_count_table(&self.template, self.orientation)?;
        let tax_file = load_taxonomy(&self.taxonomy)?;
        for w in &tax_file.warnings {
            log::warn!("{w}");
        }
        let (assignments, warnings) = match_taxonomy(&tax_file, &template, true)?;
        for w in &warnings {
            log::warn!("{w}");
        }
        let taxonomy = build_taxonomy_tree(&assignments)?;
        let phylogeny = self.tree.as_ref().map(|p| load_newick(p, NewickOptions::default())).transpose()?;
        Ok(self
            .lambdas
            .iter()
            .map(|&lambda| SimScenario {
                template: template.clone(),
                taxonomy: taxonomy.clone(),
                phylogeny: phylogeny.clone(),
                spike_taxon: self.taxon.clone(),
                lambda,
                n_per_group: self.n_per_group,
                depth: self.depth,
                alpha_sum: self.alpha_sum,
                n_replicates: self.n_replicates,
                seed: self.seed,
                n_bootstrap: self.n_bootstrap,
                metrics: self.metrics.clone(),
                global_test: self.global_test,
                test_taxa: self.test_taxa.clone(),
            })
            .collect())
    }

    /// Run every lambda in order and concatenate the reports.
    pub fn run(&self) -> Result<ScenarioReport> {
        let mut report = ScenarioReport::default();
        for s in self.scenarios()? {
            report.extend(run_scenario(&s, &self.methods)?);
        }
        Ok(report)
    }
}
