use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use leaveout::betadiv::{compute_distance, load_distance_matrix, pcoa, DistanceMatrix, DistanceOptions, Metric};
use leaveout::cat::{cat_test, results_to_json, results_to_tsv, CatRequest, GlobalTest};
use leaveout::ingest::{load_count_table, load_outcome, load_taxonomy, match_taxonomy, CountTable, Orientation, Outcome, OutcomeKind};
use leaveout::permanova::{permanova, DesignMatrix};
use leaveout::phylo::{build_taxonomy_tree, load_newick, NewickOptions, PhyloTree, TaxonSet, TaxonTree};
use leaveout::simulate::load_scenario_config;
use leaveout::Error;

mod logger;

#[derive(Parser)]
#[command(name = "leaveout", version, about = "Leave-taxon-out conditional association testing for microbiome count data")]
struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one square distance matrix per metric.
    Dist(DistArgs),
    /// PERMANOVA R², pseudo-F and permutation p-value as JSON.
    Permanova(PermanovaArgs),
    /// Principal coordinates and eigenvalues.
    Pcoa(PcoaArgs),
    /// Leave-taxon-out test for one or more taxa.
    Cat(CatArgs),
    /// Run a spike-in simulation scenario file.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct TableArgs {
    /// Count table (TSV).
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, default_value = "features-as-rows")]
    orientation: Orientation,
    /// Newick phylogeny, needed by the UniFrac metrics.
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Reject trees with missing branch lengths instead of reading them as 0.
    #[arg(long)]
    strict_lengths: bool,
    /// Bray-Curtis on per-sample proportions rather than raw counts.
    #[arg(long)]
    proportions: bool,
    /// Weighted UniFrac without the normalizing denominator.
    #[arg(long)]
    unnormalized: bool,
}

#[derive(Args)]
struct OutcomeArgs {
    /// Sample metadata TSV; the first column holds sample ids.
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    outcome_column: Option<String>,
    #[arg(long, default_value = "categorical")]
    outcome_kind: OutcomeKind,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory, or `-` to stream a single artifact to stdout.
    #[arg(long, default_value = ".")]
    out: String,
}

#[derive(Args)]
struct DistArgs {
    #[command(flatten)]
    table: TableArgs,
    #[arg(long = "metric", required = true)]
    metrics: Vec<Metric>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct PermanovaArgs {
    #[command(flatten)]
    table: TableArgs,
    /// Precomputed distance matrix instead of a count table.
    #[arg(long)]
    distance: Option<PathBuf>,
    #[arg(long, default_value = "bray-curtis")]
    metric: Metric,
    #[command(flatten)]
    outcome: OutcomeArgs,
    #[arg(long, default_value_t = 999)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct PcoaArgs {
    #[command(flatten)]
    table: TableArgs,
    #[arg(long)]
    distance: Option<PathBuf>,
    #[arg(long, default_value = "bray-curtis")]
    metric: Metric,
    /// Number of axes to keep.
    #[arg(short = 'k', default_value_t = 2)]
    k: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaxaTree {
    Taxonomy,
    Phylogeny,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Args)]
struct CatArgs {
    #[command(flatten)]
    table: TableArgs,
    /// Taxonomy assignments (lineage or rank-per-column TSV).
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Drop taxonomy/table mismatches with a warning instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Which tree defines a taxon's leaves.
    #[arg(long, value_enum, default_value = "taxonomy")]
    taxa_tree: TaxaTree,
    #[command(flatten)]
    outcome: OutcomeArgs,
    /// Taxon to leave out, e.g. `family:Ruminococcaceae`; join with `+` to
    /// leave several out together. Repeatable.
    #[arg(long = "taxon", required = true)]
    taxa: Vec<TaxonSet>,
    /// Repeat to take the maximum R² over several metrics.
    #[arg(long = "metric", default_value = "weighted-unifrac")]
    metrics: Vec<Metric>,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the PSD-corrected kernel R² instead of the PERMANOVA R².
    #[arg(long)]
    kernel: bool,
    /// Write only this format (required with `--out -`).
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file of `key = value` lines.
    config: PathBuf,
    /// Override the replicate count from the file.
    #[arg(long)]
    replicates: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

type CliResult<T> = std::result::Result<T, String>;

fn main() -> ExitCode {
    logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{first}");
            return ExitCode::from(2);
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(cli.command)),
        Err(e) => Err(format!("thread pool: {e}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Dist(a) => cmd_dist(a),
        Command::Permanova(a) => cmd_permanova(a),
        Command::Pcoa(a) => cmd_pcoa(a),
        Command::Cat(a) => cmd_cat(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

impl TableArgs {
    fn load_table(&self) -> CliResult<CountTable> {
        let path = self.table.as_ref().ok_or("missing input: --table")?;
        load_count_table(path, self.orientation).map_err(err)
    }

    fn load_tree(&self) -> CliResult<Option<PhyloTree>> {
        let opts = NewickOptions {
            require_lengths: self.strict_lengths,
        };
        let tree = self.tree.as_ref().map(|p| load_newick(p, opts)).transpose().map_err(err)?;
        if let Some(t) = &tree {
            if t.missing_lengths() > 0 {
                log::warn!("{} branch(es) without a length were read as 0", t.missing_lengths());
            }
        }
        Ok(tree)
    }

    fn options(&self) -> DistanceOptions {
        DistanceOptions {
            bray_curtis_proportions: self.proportions,
            weighted_normalized: !self.unnormalized,
        }
    }

    fn require_tree_for(&self, metrics: &[Metric]) -> CliResult<()> {
        match metrics.iter().find(|m| m.needs_tree()) {
            Some(m) if self.tree.is_none() => Err(format!("missing input: --tree is required for metric {m}")),
            _ => Ok(()),
        }
    }

    fn distance(&self, metric: Metric) -> CliResult<DistanceMatrix> {
        self.require_tree_for(&[metric])?;
        let table = self.load_table()?;
        let tree = self.load_tree()?;
        compute_distance(metric, &table, tree.as_ref(), self.options()).map_err(err)
    }
}

fn distance_input(table: &TableArgs, distance: &Option<PathBuf>, metric: Metric) -> CliResult<DistanceMatrix> {
    match distance {
        Some(p) => load_distance_matrix(p).map_err(err),
        None if table.table.is_some() => table.distance(metric),
        None => Err("missing input: --table or --distance".into()),
    }
}

impl OutcomeArgs {
    fn load(&self, sample_ids: &[String]) -> CliResult<Outcome> {
        let path = self.metadata.as_ref().ok_or("missing input: --metadata")?;
        let column = self.outcome_column.as_deref().ok_or("missing input: --outcome-column")?;
        let outcome = load_outcome(path, column, self.outcome_kind).map_err(err)?;
        outcome.align_to(sample_ids).map_err(err)
    }
}

/// Where artifacts go: a directory, or stdout for exactly one artifact.
struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    fn new(out: &OutArgs, artifacts: usize) -> CliResult<Self> {
        if out.out == "-" {
            if artifacts != 1 {
                return Err(format!("--out - streams one artifact, but this run produces {artifacts}"));
            }
            return Ok(Sink { dir: None });
        }
        let dir = PathBuf::from(&out.out);
        fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok(Sink { dir: Some(dir) })
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<()> {
        match &self.dir {
            Some(dir) => {
                let path = dir.join(name);
                fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))
            }
            None => std::io::stdout().write_all(contents.as_bytes()).map_err(|e| format!("stdout: {e}")),
        }
    }
}

fn cmd_dist(a: DistArgs) -> CliResult<()> {
    a.table.require_tree_for(&a.metrics)?;
    if a.metrics.contains(&Metric::Precomputed) {
        return Err("metric precomputed cannot be derived from a count table".into());
    }
    let sink = Sink::new(&a.out, a.metrics.len())?;
    let table = a.table.load_table()?;
    let tree = a.table.load_tree()?;
    for &m in &a.metrics {
        let d = compute_distance(m, &table, tree.as_ref(), a.table.options()).map_err(err)?;
        sink.write(&format!("distance_{}.tsv", m.tag()), &d.to_tsv())?;
    }
    Ok(())
}

fn cmd_permanova(a: PermanovaArgs) -> CliResult<()> {
    let sink = Sink::new(&a.out, 1)?;
    let d = distance_input(&a.table, &a.distance, a.metric)?;
    let outcome = a.outcome.load(d.sample_ids())?;
    let design = DesignMatrix::from_outcome(&outcome).map_err(err)?;
    let result = permanova(&d, &design, a.permutations, a.seed).map_err(err)?;
    sink.write("permanova.json", &(result.to_json() + "\n"))
}

fn cmd_pcoa(a: PcoaArgs) -> CliResult<()> {
    let d = distance_input(&a.table, &a.distance, a.metric)?;
    let p = pcoa(&d, a.k).map_err(err)?;
    for w in &p.warnings {
        log::warn!("{w}");
    }
    if a.out.out == "-" {
        return Sink::new(&a.out, 1)?.write("", &p.coordinates_tsv());
    }
    let sink = Sink::new(&a.out, 2)?;
    sink.write("pcoa_coordinates.tsv", &p.coordinates_tsv())?;
    sink.write("pcoa_eigenvalues.tsv", &p.eigenvalues_tsv())
}

fn cmd_cat(a: CatArgs) -> CliResult<()> {
    let formats: Vec<Format> = match a.format {
        Some(f) => vec![f],
        None => vec![Format::Tsv, Format::Json],
    };
    let sink = Sink::new(&a.out, formats.len())?;
    a.table.require_tree_for(&a.metrics)?;
    let table = a.table.load_table()?;
    let phylogeny = a.table.load_tree()?;
    let outcome = a.outcome.load(table.sample_ids())?;

    let taxonomy_tree;
    let taxa_tree: &dyn TaxonTree = match a.taxa_tree {
        TaxaTree::Taxonomy => {
            let path = a.taxonomy.as_ref().ok_or("missing input: --taxonomy")?;
            let file = load_taxonomy(path).map_err(err)?;
            for w in &file.warnings {
                log::warn!("{w}");
            }
            let (assignments, warnings) = match_taxonomy(&file, &table, !a.lenient).map_err(err)?;
            for w in &warnings {
                log::warn!("{w}");
            }
            taxonomy_tree = build_taxonomy_tree(&assignments).map_err(err)?;
            &taxonomy_tree
        }
        TaxaTree::Phylogeny => phylogeny.as_ref().ok_or("missing input: --tree is required with --taxa-tree phylogeny")?,
    };

    let request = CatRequest {
        table: &table,
        phylogeny: phylogeny.as_ref(),
        taxa_tree,
        outcome: &outcome,
        taxa: a.taxa.clone(),
        metrics: a.metrics.clone(),
        n_bootstrap: a.bootstrap,
        seed: a.seed,
        global_test: if a.kernel { GlobalTest::Kernel } else { GlobalTest::Permanova },
        distance_options: a.table.options(),
    };
    let results = cat_test(&request).map_err(err)?;
    for f in formats {
        match f {
            Format::Tsv => sink.write("cat_results.tsv", &results_to_tsv(&results))?,
            Format::Json => sink.write("cat_results.json", &(results_to_json(&results) + "\n"))?,
        }
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let mut config = load_scenario_config(&a.config).map_err(err)?;
    if let Some(r) = a.replicates {
        config.n_replicates = r;
    }
    let sink = Sink::new(&a.out, 2)?;
    let report = config.run().map_err(err)?;
    sink.write("rejection_rates.tsv", &report.rejection_tsv())?;
    sink.write("r2_pairs.tsv", &report.r2_pairs_tsv())
}
