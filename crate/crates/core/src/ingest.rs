//! Count tables, sample outcomes and taxonomy assignments from tab-delimited
//! text.
//!
//! Every loader has a `parse_*` twin that works on raw bytes so the same code
//! path serves files, tests and fuzzing. Counts are held samples × features.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{decode_utf8, read_file, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// One row per feature, one column per sample (OTU-table style).
    #[default]
    FeaturesAsRows,
    SamplesAsRows,
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features-as-rows" => Ok(Orientation::FeaturesAsRows),
            "samples-as-rows" => Ok(Orientation::SamplesAsRows),
            other => Err(Error::invalid(format!(
                "unknown orientation `{other}` (expected features-as-rows or samples-as-rows)"
            ))),
        }
    }
}

/// Non-negative integer counts, samples × features, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    sample_ids: Vec<String>,
    feature_ids: Vec<String>,
    counts: Vec<u64>,
}

fn duplicates(ids: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dup = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            dup.insert(id.clone());
        }
    }
    dup.into_iter().collect()
}

impl CountTable {
    pub fn new(sample_ids: Vec<String>, feature_ids: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if sample_ids.len() < 2 {
            return Err(Error::invalid("count table needs at least 2 samples"));
        }
        if feature_ids.is_empty() {
            return Err(Error::invalid("count table needs at least 1 feature"));
        }
        if counts.len() != sample_ids.len() * feature_ids.len() {
            return Err(Error::invalid(format!(
                "count matrix has {} cells, expected {} × {}",
                counts.len(),
                sample_ids.len(),
                feature_ids.len()
            )));
        }
        let dup = duplicates(&sample_ids);
        if !dup.is_empty() {
            return Err(Error::Duplicate { kind: "sample", ids: dup });
        }
        let dup = duplicates(&feature_ids);
        if !dup.is_empty() {
            return Err(Error::Duplicate { kind: "feature", ids: dup });
        }
        Ok(CountTable {
            sample_ids,
            feature_ids,
            counts,
        })
    }

    /// Build from per-sample rows.
    pub fn from_rows(sample_ids: Vec<String>, feature_ids: Vec<String>, rows: &[Vec<u64>]) -> Result<Self> {
        if rows.len() != sample_ids.len() || rows.iter().any(|r| r.len() != feature_ids.len()) {
            return Err(Error::invalid("row shape does not match identifiers"));
        }
        Self::new(sample_ids, feature_ids, rows.concat())
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row(&self, sample: usize) -> &[u64] {
        let m = self.n_features();
        &self.counts[sample * m..(sample + 1) * m]
    }

    pub fn get(&self, sample: usize, feature: usize) -> u64 {
        self.counts[sample * self.n_features() + feature]
    }

    pub fn sample_total(&self, sample: usize) -> u64 {
        self.row(sample).iter().sum()
    }

    pub fn feature_index(&self, id: &str) -> Option<usize> {
        self.feature_ids.iter().position(|f| f == id)
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.n_features()];
        for s in 0..self.n_samples() {
            for (acc, &c) in sums.iter_mut().zip(self.row(s)) {
                *acc += c;
            }
        }
        sums
    }

    pub fn is_all_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    /// Copy with columns zeroed; the caller has already validated indices.
    pub(crate) fn with_zeroed_columns(&self, columns: &[usize]) -> CountTable {
        let mut out = self.clone();
        let m = self.n_features();
        for s in 0..self.n_samples() {
            for &c in columns {
                out.counts[s * m + c] = 0;
            }
        }
        out
    }

    /// Rows reordered (and possibly subset) by sample index.
    pub fn select_samples(&self, order: &[usize]) -> Result<CountTable> {
        let ids = order.iter().map(|&i| self.sample_ids[i].clone()).collect();
        let mut counts = Vec::with_capacity(order.len() * self.n_features());
        for &i in order {
            counts.extend_from_slice(self.row(i));
        }
        CountTable::new(ids, self.feature_ids.clone(), counts)
    }

    pub fn to_tsv(&self, orientation: Orientation) -> String {
        let mut out = String::new();
        match orientation {
            Orientation::SamplesAsRows => {
                out.push_str("sample_id");
                for f in &self.feature_ids {
                    out.push('\t');
                    out.push_str(f);
                }
                out.push('\n');
                for (s, id) in self.sample_ids.iter().enumerate() {
                    out.push_str(id);
                    for c in self.row(s) {
                        out.push('\t');
                        out.push_str(&c.to_string());
                    }
                    out.push('\n');
                }
            }
            Orientation::FeaturesAsRows => {
                out.push_str("feature_id");
                for s in &self.sample_ids {
                    out.push('\t');
                    out.push_str(s);
                }
                out.push('\n');
                for (f, id) in self.feature_ids.iter().enumerate() {
                    out.push_str(id);
                    for s in 0..self.n_samples() {
                        out.push('\t');
                        out.push_str(&self.get(s, f).to_string());
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// Lines of a TSV with their 1-based line numbers, blank lines dropped and
/// `\r\n` endings tolerated.
fn tsv_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            None
        } else {
            Some((i + 1, line.split('\t').collect()))
        }
    })
}

fn parse_count_cell(cell: &str, line: usize, column: usize) -> Result<u64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<u64>() {
        return Ok(v);
    }
    match cell.parse::<f64>() {
        Ok(v) if v < 0.0 => Err(Error::table(line, column, format!("negative count `{cell}`"))),
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v <= 9_007_199_254_740_992.0 => Ok(v as u64),
        Ok(_) => Err(Error::table(line, column, format!("non-integer count `{cell}`"))),
        Err(_) if cell.is_empty() => Err(Error::table(line, column, "missing count")),
        Err(_) => Err(Error::table(line, column, format!("non-numeric count `{cell}`"))),
    }
}

/// Parse a count table from TSV bytes. The first non-comment row holds the
/// column identifiers; the first cell of it is a corner label and ignored.
pub fn parse_count_table(bytes: &[u8], orientation: Orientation) -> Result<CountTable> {
    let text = decode_utf8(bytes)?;
    let mut lines = tsv_lines(text)
        .skip_while(|(_, cells)| cells.len() == 1 && cells[0].starts_with('#'))
        .peekable();
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| Error::invalid("count table is empty"))?;
    let col_ids: Vec<String> = header[1..].iter().map(|s| s.trim().to_string()).collect();
    if let Some(pos) = col_ids.iter().position(|s| s.is_empty()) {
        return Err(Error::table(header_line, pos + 2, "empty identifier in header"));
    }

    let mut row_ids = Vec::new();
    let mut cells = Vec::new();
    for (line, fields) in lines {
        if fields.len() != header.len() {
            return Err(Error::table(
                line,
                fields.len().min(header.len()) + 1,
                format!("ragged row: {} fields, header has {}", fields.len(), header.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::table(line, 1, "empty row identifier"));
        }
        row_ids.push(id.to_string());
        for (j, cell) in fields[1..].iter().enumerate() {
            cells.push(parse_count_cell(cell, line, j + 2)?);
        }
    }

    let (samples, features, counts) = match orientation {
        Orientation::SamplesAsRows => (row_ids, col_ids, cells),
        Orientation::FeaturesAsRows => {
            let (nf, ns) = (row_ids.len(), col_ids.len());
            let mut t = vec![0u64; cells.len()];
            for f in 0..nf {
                for s in 0..ns {
                    t[s * nf + f] = cells[f * ns + s];
                }
            }
            (col_ids, row_ids, t)
        }
    };
    CountTable::new(samples, features, counts)
}

pub fn load_count_table(path: impl AsRef<Path>, orientation: Orientation) -> Result<CountTable> {
    parse_count_table(&read_file(path.as_ref())?, orientation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
    Categorical,
}

impl FromStr for OutcomeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(OutcomeKind::Continuous),
            "binary" => Ok(OutcomeKind::Binary),
            "categorical" => Ok(OutcomeKind::Categorical),
            other => Err(Error::invalid(format!(
                "unknown outcome kind `{other}` (expected continuous, binary or categorical)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeValues {
    Continuous(Vec<f64>),
    /// `levels` sorted lexicographically; `codes[i]` indexes into it.
    Categorical { levels: Vec<String>, codes: Vec<usize> },
}

/// Per-sample outcome. Binary outcomes are categorical with two levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    sample_ids: Vec<String>,
    kind: OutcomeKind,
    values: OutcomeValues,
}

impl Outcome {
    pub fn continuous(sample_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if sample_ids.len() != values.len() {
            return Err(Error::invalid("outcome length does not match sample ids"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite outcome for sample `{}`",
                sample_ids[i]
            )));
        }
        let dup = duplicates(&sample_ids);
        if !dup.is_empty() {
            return Err(Error::Duplicate { kind: "sample", ids: dup });
        }
        Ok(Outcome {
            sample_ids,
            kind: OutcomeKind::Continuous,
            values: OutcomeValues::Continuous(values),
        })
    }

    /// Categorical (or binary) outcome from per-sample labels.
    pub fn categorical<S: AsRef<str>>(sample_ids: Vec<String>, labels: &[S], kind: OutcomeKind) -> Result<Self> {
        if sample_ids.len() != labels.len() {
            return Err(Error::invalid("outcome length does not match sample ids"));
        }
        let dup = duplicates(&sample_ids);
        if !dup.is_empty() {
            return Err(Error::Duplicate { kind: "sample", ids: dup });
        }
        let levels: Vec<String> = labels
            .iter()
            .map(|l| l.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        match kind {
            OutcomeKind::Continuous => {
                return Err(Error::invalid("categorical constructor used with continuous kind"))
            }
            OutcomeKind::Binary if levels.len() != 2 => {
                return Err(Error::invalid(format!(
                    "binary outcome needs exactly 2 levels, found {}: {}",
                    levels.len(),
                    levels.join(", ")
                )))
            }
            _ if levels.len() < 2 => {
                return Err(Error::invalid(format!(
                    "categorical outcome has a single level `{}`",
                    levels.first().map(String::as_str).unwrap_or("")
                )))
            }
            _ => {}
        }
        let codes = labels
            .iter()
            .map(|l| levels.binary_search_by(|x| x.as_str().cmp(l.as_ref())).unwrap())
            .collect();
        Ok(Outcome {
            sample_ids,
            kind,
            values: OutcomeValues::Categorical { levels, codes },
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn kind(&self) -> OutcomeKind {
        self.kind
    }

    pub fn values(&self) -> &OutcomeValues {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// Reorder by sample id to match `target`. Every target id must be present;
    /// extra metadata rows are ignored.
    pub fn align_to(&self, target: &[String]) -> Result<Outcome> {
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut order = Vec::with_capacity(target.len());
        let mut missing = Vec::new();
        for id in target {
            match index.get(id.as_str()) {
                Some(&i) => order.push(i),
                None => missing.push(id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Missing {
                kind: "samples in outcome metadata",
                ids: missing,
            });
        }
        self.select(&order)
    }

    /// Rows picked by index (repeats allowed); level set is kept as is.
    pub(crate) fn select(&self, order: &[usize]) -> Result<Outcome> {
        let sample_ids: Vec<String> = order.iter().map(|&i| self.sample_ids[i].clone()).collect();
        let values = match &self.values {
            OutcomeValues::Continuous(v) => OutcomeValues::Continuous(order.iter().map(|&i| v[i]).collect()),
            OutcomeValues::Categorical { levels, codes } => {
                let codes: Vec<usize> = order.iter().map(|&i| codes[i]).collect();
                let present: BTreeSet<usize> = codes.iter().copied().collect();
                if present.len() < 2 {
                    return Err(Error::invalid("aligned outcome has a single level"));
                }
                OutcomeValues::Categorical {
                    levels: levels.clone(),
                    codes,
                }
            }
        };
        Ok(Outcome {
            sample_ids,
            kind: self.kind,
            values,
        })
    }
}

fn is_missing_value(v: &str) -> bool {
    matches!(v, "" | "NA" | "N/A" | "NaN" | "nan" | "null" | "NULL")
}

/// Parse one column of a metadata TSV. The first column holds sample ids.
pub fn parse_outcome(bytes: &[u8], column: &str, kind: OutcomeKind) -> Result<Outcome> {
    let text = decode_utf8(bytes)?;
    let mut lines = tsv_lines(text);
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| Error::invalid("metadata file is empty"))?;
    let col = header
        .iter()
        .skip(1)
        .position(|h| h.trim() == column)
        .map(|p| p + 1)
        .ok_or_else(|| {
            Error::table(header_line, 1, format!("metadata has no column `{column}`"))
        })?;

    let mut ids = Vec::new();
    let mut raw = Vec::new();
    for (line, fields) in lines {
        if fields.len() != header.len() {
            return Err(Error::table(
                line,
                fields.len().min(header.len()) + 1,
                format!("ragged row: {} fields, header has {}", fields.len(), header.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::table(line, 1, "empty sample identifier"));
        }
        let value = fields[col].trim();
        if is_missing_value(value) {
            return Err(Error::table(
                line,
                col + 1,
                format!("missing value `{value}` for sample `{id}`"),
            ));
        }
        ids.push(id.to_string());
        raw.push((line, value));
    }

    match kind {
        OutcomeKind::Continuous => {
            let mut values = Vec::with_capacity(raw.len());
            for (i, (line, v)) in raw.iter().enumerate() {
                match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => values.push(x),
                    _ => {
                        return Err(Error::table(
                            *line,
                            col + 1,
                            format!("non-numeric value `{v}` for sample `{}`", ids[i]),
                        ))
                    }
                }
            }
            Outcome::continuous(ids, values)
        }
        _ => {
            let labels: Vec<&str> = raw.iter().map(|(_, v)| *v).collect();
            Outcome::categorical(ids, &labels, kind)
        }
    }
}

pub fn load_outcome(path: impl AsRef<Path>, column: &str, kind: OutcomeKind) -> Result<Outcome> {
    parse_outcome(&read_file(path.as_ref())?, column, kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rank {
    Kingdom,
    Phylum,
    Class,
    Order,
    Family,
    Genus,
    Species,
}

impl Rank {
    pub const ALL: [Rank; 7] = [
        Rank::Kingdom,
        Rank::Phylum,
        Rank::Class,
        Rank::Order,
        Rank::Family,
        Rank::Genus,
        Rank::Species,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rank::Kingdom => "kingdom",
            Rank::Phylum => "phylum",
            Rank::Class => "class",
            Rank::Order => "order",
            Rank::Family => "family",
            Rank::Genus => "genus",
            Rank::Species => "species",
        }
    }

    fn from_prefix(p: &str) -> Option<Rank> {
        match p {
            // d__ is the domain prefix used by SILVA and GTDB
            "k" | "d" => Some(Rank::Kingdom),
            "p" => Some(Rank::Phylum),
            "c" => Some(Rank::Class),
            "o" => Some(Rank::Order),
            "f" => Some(Rank::Family),
            "g" => Some(Rank::Genus),
            "s" => Some(Rank::Species),
            _ => None,
        }
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rank {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Rank::ALL
            .into_iter()
            .find(|r| r.name() == lower || (lower == "domain" && *r == Rank::Kingdom))
            .ok_or_else(|| Error::invalid(format!("unknown rank `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyAssignment {
    pub feature_id: String,
    /// Broad to specific; unassigned ranks are absent.
    pub lineage: Vec<(Rank, String)>,
}

#[derive(Debug, Clone, Default)]
pub struct TaxonomyFile {
    pub assignments: Vec<TaxonomyAssignment>,
    pub warnings: Vec<String>,
}

fn push_rank(
    lineage: &mut Vec<(Rank, String)>,
    rank: Rank,
    name: &str,
    line: usize,
) -> Result<()> {
    if let Some(&(last, _)) = lineage.last() {
        if rank <= last {
            return Err(Error::Taxonomy {
                line,
                message: format!("rank {rank} appears after {last}"),
            });
        }
    }
    lineage.push((rank, name.to_string()));
    Ok(())
}

/// Collect gap warnings: an empty rank between two assigned ranks.
fn gap_warning(feature: &str, assigned: &[(Rank, String)], empty: &[Rank]) -> Option<String> {
    let last = assigned.last()?.0;
    let gaps: Vec<&str> = empty.iter().filter(|r| **r < last).map(|r| r.name()).collect();
    (!gaps.is_empty()).then(|| format!("feature `{feature}`: unassigned intermediate rank(s) {}", gaps.join(", ")))
}

type Lineage = Vec<(Rank, String)>;

fn parse_lineage(feature: &str, lineage: &str, line: usize) -> Result<(Lineage, Option<String>)> {
    let mut out = Vec::new();
    let mut empty = Vec::new();
    let mut last_seen: Option<Rank> = None;
    for seg in lineage.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (prefix, name) = seg.split_once("__").ok_or_else(|| Error::Taxonomy {
            line,
            message: format!("segment `{seg}` lacks a rank prefix"),
        })?;
        let rank = Rank::from_prefix(prefix).ok_or_else(|| Error::Taxonomy {
            line,
            message: format!("unknown rank prefix \"{prefix}__\""),
        })?;
        if let Some(prev) = last_seen {
            if rank <= prev {
                return Err(Error::Taxonomy {
                    line,
                    message: format!("rank {rank} appears after {prev}"),
                });
            }
        }
        last_seen = Some(rank);
        let name = name.trim();
        if name.is_empty() {
            empty.push(rank);
        } else {
            push_rank(&mut out, rank, name, line)?;
        }
    }
    let warning = gap_warning(feature, &out, &empty);
    Ok((out, warning))
}

/// Parse taxonomy assignments. Two layouts are accepted:
///
/// * `feature_id<TAB>k__Bacteria;p__Firmicutes;...` with an optional header
///   row whose second field is `taxonomy`/`taxon`/`lineage`;
/// * a rank-per-column table whose header names ranks, e.g.
///   `feature_id<TAB>kingdom<TAB>phylum<TAB>...`.
pub fn parse_taxonomy(bytes: &[u8]) -> Result<TaxonomyFile> {
    let text = decode_utf8(bytes)?;
    let mut lines = tsv_lines(text)
        .filter(|(_, cells)| !(cells.len() == 1 && cells[0].starts_with('#')))
        .peekable();
    let mut file = TaxonomyFile::default();

    let rank_columns: Option<Vec<Rank>> = lines.peek().and_then(|(_, header)| {
        if header.len() < 2 {
            return None;
        }
        header[1..].iter().map(|h| h.parse::<Rank>().ok()).collect()
    });

    if let Some(ranks) = rank_columns {
        let (line, _) = lines.next().unwrap();
        if ranks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Taxonomy {
                line,
                message: "rank columns are not in broad-to-specific order".into(),
            });
        }
        for (line, fields) in lines {
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(Error::Taxonomy { line, message: "empty feature id".into() });
            }
            if fields.len() > ranks.len() + 1 {
                return Err(Error::Taxonomy {
                    line,
                    message: format!("{} fields, header has {}", fields.len(), ranks.len() + 1),
                });
            }
            let mut lineage = Vec::new();
            let mut empty = Vec::new();
            for (rank, cell) in ranks.iter().zip(&fields[1..]) {
                // tolerate prefixed cells such as "p__Firmicutes"
                let name = cell.trim();
                let name = name.split_once("__").map(|(_, n)| n).unwrap_or(name).trim();
                if name.is_empty() || is_missing_value(name) {
                    empty.push(*rank);
                } else {
                    push_rank(&mut lineage, *rank, name, line)?;
                }
            }
            if let Some(w) = gap_warning(id, &lineage, &empty) {
                file.warnings.push(w);
            }
            file.assignments.push(TaxonomyAssignment {
                feature_id: id.to_string(),
                lineage,
            });
        }
    } else {
        let mut first = true;
        for (line, fields) in lines {
            let is_header = first
                && fields.len() >= 2
                && matches!(
                    fields[1].trim().to_ascii_lowercase().as_str(),
                    "taxonomy" | "taxon" | "lineage"
                );
            first = false;
            if is_header {
                continue;
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(Error::Taxonomy { line, message: "empty feature id".into() });
            }
            let lineage_text = fields.get(1).copied().unwrap_or("");
            let (lineage, warning) = parse_lineage(id, lineage_text, line)?;
            if let Some(w) = warning {
                file.warnings.push(w);
            }
            file.assignments.push(TaxonomyAssignment {
                feature_id: id.to_string(),
                lineage,
            });
        }
    }

    let ids: Vec<String> = file.assignments.iter().map(|a| a.feature_id.clone()).collect();
    let dup = duplicates(&ids);
    if !dup.is_empty() {
        return Err(Error::Duplicate { kind: "taxonomy feature", ids: dup });
    }
    Ok(file)
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<TaxonomyFile> {
    parse_taxonomy(&read_file(path.as_ref())?)
}

/// Check taxonomy features against a count table. Strict mode rejects
/// unknown features; lenient mode drops them and reports a warning.
pub fn match_taxonomy(
    file: &TaxonomyFile,
    table: &CountTable,
    strict: bool,
) -> Result<(Vec<TaxonomyAssignment>, Vec<String>)> {
    let known: HashSet<&str> = table.feature_ids().iter().map(String::as_str).collect();
    let (kept, unknown): (Vec<_>, Vec<_>) = file
        .assignments
        .iter()
        .cloned()
        .partition(|a| known.contains(a.feature_id.as_str()));
    if unknown.is_empty() {
        return Ok((kept, Vec::new()));
    }
    let ids: Vec<String> = unknown.into_iter().map(|a| a.feature_id).collect();
    if strict {
        return Err(Error::Missing {
            kind: "taxonomy features in count table",
            ids,
        });
    }
    let warning = format!(
        "dropped {} taxonomy feature(s) absent from the count table: {}",
        ids.len(),
        ids.join(", ")
    );
    Ok((kept, vec![warning]))
}

/// Sorted sample order, used wherever results must not depend on input order.
pub(crate) fn sorted_order(ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    order
}

/// Count of each category level, keyed by level name.
pub fn level_counts(outcome: &Outcome) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    if let OutcomeValues::Categorical { levels, codes } = outcome.values() {
        for &c in codes {
            *out.entry(levels[c].clone()).or_insert(0) += 1;
        }
    }
    out
}
