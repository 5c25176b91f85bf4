//! Text formats: GMT gene sets, expression and phenotype TSV, weights, results.
//!
//! All readers accept LF or CRLF line endings. Line numbers in errors are 1-based.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use crate::dataset::{GeneSet, GeneSetCollection, RawMatrix};
use crate::error::{Error, Result};

/// Lines with their 1-based numbers, line terminators stripped.
fn numbered_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().map(|(i, l)| {
        let mut l = l.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::parse(i + 1, "invalid UTF-8"),
            _ => Error::Io(e),
        })?;
        if l.ends_with('\r') {
            l.pop();
        }
        Ok((i + 1, l))
    })
}

fn parse_real(cell: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("{what}: `{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("{what}: `{cell}` is not finite")));
    }
    Ok(v)
}

fn looks_numeric(cell: &str) -> bool {
    cell.trim().parse::<f64>().is_ok()
}

/// A parsed collection plus non-fatal diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedGmt {
    pub collection: GeneSetCollection,
    pub warnings: Vec<String>,
}

/// One set per nonempty line: `name<TAB>description<TAB>gene…`.
/// Empty gene fields (such as a trailing tab) are ignored.
pub fn parse_gmt<R: BufRead>(reader: R) -> Result<ParsedGmt> {
    let mut sets = Vec::new();
    let mut warnings = Vec::new();
    let mut names = HashSet::new();
    for item in numbered_lines(reader) {
        let (line, text) = item?;
        if text.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::parse(line, format!("expected name, description and genes; got {} field(s)", fields.len())));
        }
        let name = fields[0].trim();
        if name.is_empty() {
            return Err(Error::parse(line, "empty set name"));
        }
        if !names.insert(name.to_string()) {
            return Err(Error::parse(line, format!("duplicate set name `{name}`")));
        }
        let mut seen = HashSet::new();
        let mut genes = Vec::new();
        for g in fields[2..].iter().map(|g| g.trim()).filter(|g| !g.is_empty()) {
            if seen.insert(g) {
                genes.push(g.to_string());
            } else {
                warnings.push(format!("line {line}: set `{name}` lists gene `{g}` more than once"));
            }
        }
        if genes.is_empty() {
            return Err(Error::parse(line, format!("set `{name}` has no genes")));
        }
        sets.push(GeneSet { name: name.to_string(), description: fields[1].to_string(), genes });
    }
    Ok(ParsedGmt { collection: GeneSetCollection::new(sets)?, warnings })
}

fn check_unique_at(ids: &[String], line: usize, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(Error::parse(line, format!("empty {what} id")));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::parse(line, format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

/// Header of subject ids (optionally after a corner cell), then one row per
/// gene: id followed by one value per subject. Missing values are rejected.
pub fn parse_expression_tsv<R: BufRead>(reader: R) -> Result<RawMatrix> {
    let mut lines = numbered_lines(reader).filter(|l| !matches!(l, Ok((_, t)) if t.trim().is_empty()));
    let (header_line, header) = lines.next().ok_or_else(|| Error::parse(1, "empty expression file"))??;
    let header: Vec<String> = header.split('\t').map(|s| s.trim().to_string()).collect();
    let mut gene_ids = Vec::new();
    let mut values = Vec::new();
    let mut subject_ids: Option<Vec<String>> = None;
    let mut gene_lines = HashMap::new();
    for item in lines {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').collect();
        if subject_ids.is_none() {
            let ids = if fields.len() == header.len() + 1 {
                header.clone()
            } else if fields.len() == header.len() && header.len() >= 2 {
                header[1..].to_vec()
            } else {
                return Err(Error::parse(
                    line,
                    format!("row has {} fields but the header lists {} subjects", fields.len(), header.len()),
                ));
            };
            check_unique_at(&ids, header_line, "subject")?;
            subject_ids = Some(ids);
        }
        let ids = subject_ids.as_ref().expect("set above");
        if fields.len() != ids.len() + 1 {
            return Err(Error::parse(
                line,
                format!("expected gene id and {} values, got {} fields", ids.len(), fields.len()),
            ));
        }
        let gene = fields[0].trim();
        if gene.is_empty() {
            return Err(Error::parse(line, "empty gene id"));
        }
        if let Some(first) = gene_lines.insert(gene.to_string(), line) {
            return Err(Error::parse(line, format!("duplicate gene id `{gene}` (first on line {first})")));
        }
        for (cell, subject) in fields[1..].iter().zip(ids) {
            values.push(parse_real(cell, line, &format!("gene `{gene}`, subject `{subject}`"))?);
        }
        gene_ids.push(gene.to_string());
    }
    let subject_ids = subject_ids.ok_or_else(|| Error::parse(header_line, "no gene rows after header"))?;
    RawMatrix::new(gene_ids, subject_ids, values)
}

/// Two-column `id<TAB>value` records with an optional header line.
fn parse_keyed_values<R: BufRead>(reader: R, what: &str) -> Result<Vec<(usize, String, f64)>> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    let mut first = true;
    for item in numbered_lines(reader) {
        let (line, text) = item?;
        if text.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(line, format!("expected 2 tab-separated fields, got {}", fields.len())));
        }
        if std::mem::take(&mut first) && !looks_numeric(fields[1]) {
            continue;
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::parse(line, format!("empty {what} id")));
        }
        if let Some(first) = seen.insert(id.to_string(), line) {
            return Err(Error::parse(line, format!("duplicate {what} id `{id}` (first on line {first})")));
        }
        out.push((line, id.to_string(), parse_real(fields[1], line, &format!("{what} `{id}`"))?));
    }
    Ok(out)
}

/// Phenotype values reordered to `subject_ids` by id join.
pub fn parse_phenotype<R: BufRead>(reader: R, subject_ids: &[String]) -> Result<Vec<f64>> {
    let records = parse_keyed_values(reader, "subject")?;
    let by_id: HashMap<&str, f64> = records.iter().map(|(_, id, v)| (id.as_str(), *v)).collect();
    let expected: HashSet<&str> = subject_ids.iter().map(String::as_str).collect();
    let extra: Vec<String> = records.iter().filter(|(_, id, _)| !expected.contains(id.as_str())).map(|r| r.1.clone()).collect();
    if !extra.is_empty() {
        return Err(Error::UnmatchedIds { context: "phenotype subjects absent from the expression matrix".into(), ids: extra });
    }
    let missing: Vec<String> = subject_ids.iter().filter(|s| !by_id.contains_key(s.as_str())).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::UnmatchedIds { context: "expression subjects without a phenotype value".into(), ids: missing });
    }
    Ok(subject_ids.iter().map(|s| by_id[s.as_str()]).collect())
}

/// Per-gene weights as `gene<TAB>weight`.
pub fn parse_weights<R: BufRead>(reader: R) -> Result<HashMap<String, f64>> {
    Ok(parse_keyed_values(reader, "gene")?.into_iter().map(|(_, id, w)| (id, w)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StatisticKind {
    Linear,
    Quadratic,
}

impl StatisticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StatisticKind::Linear => "linear",
            StatisticKind::Quadratic => "quadratic",
        }
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(StatisticKind::Linear),
            "quadratic" => Ok(StatisticKind::Quadratic),
            other => Err(Error::Domain(format!("unknown statistic kind `{other}`"))),
        }
    }
}

/// One output line. `size` is 0 when the set could not be resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub set_name: String,
    pub size: usize,
    pub kind: StatisticKind,
    pub observed: Option<f64>,
    pub params: Vec<(String, f64)>,
    pub p_left: Option<f64>,
    pub p_right: Option<f64>,
    pub p_central: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub warnings: Vec<String>,
}

impl ResultRow {
    pub fn warning_only(set_name: &str, size: usize, kind: StatisticKind, warning: String) -> Self {
        Self {
            set_name: set_name.to_string(),
            size,
            kind,
            observed: None,
            params: vec![],
            p_left: None,
            p_right: None,
            p_central: None,
            p_adjusted: None,
            warnings: vec![warning],
        }
    }
}

pub const RESULT_COLUMNS: [&str; 10] =
    ["set", "size", "kind", "observed", "params", "p_left", "p_right", "p_central", "p_adjusted", "warnings"];

/// 17 significant digits, enough to round-trip any double.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), format_real)
}

fn sanitize(s: &str) -> String {
    s.replace(['\t', '\n', '\r', '|'], " ")
}

pub fn write_results<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(out, "{}", RESULT_COLUMNS.join("\t"))?;
    for r in rows {
        let params: Vec<String> = r.params.iter().map(|(k, v)| format!("{}={}", k, format_real(*v))).collect();
        let warnings: Vec<String> = r.warnings.iter().map(|w| sanitize(w)).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            sanitize(&r.set_name),
            r.size,
            r.kind,
            format_opt(r.observed),
            params.join(";"),
            format_opt(r.p_left),
            format_opt(r.p_right),
            format_opt(r.p_central),
            format_opt(r.p_adjusted),
            warnings.join("|"),
        )?;
    }
    out.flush()?;
    Ok(())
}

fn parse_opt(cell: &str, line: usize, what: &str) -> Result<Option<f64>> {
    if cell == "NA" {
        Ok(None)
    } else {
        parse_real(cell, line, what).map(Some)
    }
}

/// Inverse of [`write_results`].
pub fn parse_results<R: BufRead>(reader: R) -> Result<Vec<ResultRow>> {
    let mut lines = numbered_lines(reader);
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty results file"))??;
    if header.split('\t').ne(RESULT_COLUMNS) {
        return Err(Error::parse(1, "unexpected results header"));
    }
    let mut rows = Vec::new();
    for item in lines {
        let (line, text) = item?;
        if text.is_empty() {
            continue;
        }
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != RESULT_COLUMNS.len() {
            return Err(Error::parse(line, format!("expected {} fields, got {}", RESULT_COLUMNS.len(), f.len())));
        }
        let size = f[1].parse().map_err(|_| Error::parse(line, format!("bad size `{}`", f[1])))?;
        let kind = f[2].parse().map_err(|_| Error::parse(line, format!("bad kind `{}`", f[2])))?;
        let params = if f[4].is_empty() {
            vec![]
        } else {
            f[4].split(';')
                .map(|kv| {
                    let (k, v) = kv.split_once('=').ok_or_else(|| Error::parse(line, format!("bad parameter `{kv}`")))?;
                    Ok((k.to_string(), parse_real(v, line, k)?))
                })
                .collect::<Result<Vec<_>>>()?
        };
        rows.push(ResultRow {
            set_name: f[0].to_string(),
            size,
            kind,
            observed: parse_opt(f[3], line, "observed")?,
            params,
            p_left: parse_opt(f[5], line, "p_left")?,
            p_right: parse_opt(f[6], line, "p_right")?,
            p_central: parse_opt(f[7], line, "p_central")?,
            p_adjusted: parse_opt(f[8], line, "p_adjusted")?,
            warnings: if f[9].is_empty() { vec![] } else { f[9].split('|').map(String::from).collect() },
        });
    }
    Ok(rows)
}
