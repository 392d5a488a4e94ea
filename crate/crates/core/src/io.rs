//! Reading datasets and writing instances and result tables.
//!
//! Edge lists hold two whitespace-separated 1-based node ids per line;
//! `#` starts a comment. Attribute files start with a header line naming the
//! columns, followed by one row per node: the node id, then one value per
//! attribute.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariates::DyadCovariates;
use crate::datagen::{SimDesign, SimInstance};
use crate::error::{Error, Result};
use crate::fit::IterationRecord;
use crate::modelselect::BicScan;
use crate::network::Network;
use crate::parallel::RoundLedger;
use crate::params::{Labels, Params};

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn content_lines(path: &Path) -> Result<impl Iterator<Item = (usize, String)>> {
    let file = fs::File::open(path)?;
    let mut lines = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim().to_string();
        if !body.is_empty() {
            lines.push((idx + 1, body));
        }
    }
    Ok(lines.into_iter())
}

/// Edges as 1-based id pairs with `i < j`. Duplicates and self-loops are
/// dropped with a warning.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut seen = BTreeSet::new();
    let (mut duplicates, mut loops) = (0usize, 0usize);
    for (line, body) in content_lines(path)? {
        let mut fields = body.split_whitespace();
        let mut id = |what: &str| -> Result<usize> {
            let tok = fields
                .next()
                .ok_or_else(|| parse_error(path, line, format!("missing {what} node id")))?;
            match tok.parse::<usize>() {
                Ok(0) | Err(_) => Err(parse_error(path, line, format!("bad node id {tok:?}"))),
                Ok(v) => Ok(v),
            }
        };
        let (a, b) = (id("first")?, id("second")?);
        if fields.next().is_some() {
            return Err(parse_error(path, line, "expected exactly two node ids"));
        }
        if a == b {
            loops += 1;
            continue;
        }
        if !seen.insert((a.min(b), a.max(b))) {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        log::warn!("{}: collapsed {duplicates} duplicate edges", path.display());
    }
    if loops > 0 {
        log::warn!("{}: dropped {loops} self-loops", path.display());
    }
    Ok(seen.into_iter().collect())
}

/// Node attributes keyed by 1-based node id. `None` marks a missing value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttributeTable {
    pub names: Vec<String>,
    pub rows: HashMap<usize, Vec<Option<String>>>,
}

impl AttributeTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Reads an attribute file. Values listed in `missing` are treated as
/// absent.
pub fn read_attributes(path: &Path, missing: &[String]) -> Result<AttributeTable> {
    let mut lines = content_lines(path)?;
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "empty attribute file"))?;
    let mut names: Vec<String> = header.split_whitespace().map(str::to_string).collect();
    let mut rows = HashMap::new();
    let mut width = None;
    for (line, body) in lines {
        let fields: Vec<&str> = body.split_whitespace().collect();
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w || w < 2 {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", w.max(2), fields.len()),
            ));
        }
        let id = match fields[0].parse::<usize>() {
            Ok(0) | Err(_) => return Err(parse_error(path, line, format!("bad node id {:?}", fields[0]))),
            Ok(v) => v,
        };
        let values = fields[1..]
            .iter()
            .map(|v| (!missing.iter().any(|m| m == v)).then(|| v.to_string()))
            .collect();
        if rows.insert(id, values).is_some() {
            return Err(parse_error(path, line, format!("node {id} listed twice")));
        }
    }
    // The header may or may not name the id column.
    if let Some(w) = width {
        if names.len() == w {
            names.remove(0);
        } else if names.len() != w - 1 {
            return Err(parse_error(
                path,
                1,
                format!("header names {} columns but rows have {w}", names.len()),
            ));
        }
    }
    Ok(AttributeTable { names, rows })
}

/// Dataset cleaning rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cleaning {
    /// Tokens read as missing attribute values.
    pub missing: Vec<String>,
    /// Drop nodes with any missing attribute.
    pub drop_missing: bool,
    /// Keep only nodes whose value of this attribute lies in `range`.
    pub range_filter: Option<RangeFilter>,
    /// Nodes of degree below this are dropped, repeatedly, until none remain.
    pub min_degree: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeFilter {
    pub attribute: String,
    pub min: f64,
    pub max: f64,
}

impl Default for Cleaning {
    fn default() -> Self {
        Self {
            missing: vec!["NA".into(), "?".into()],
            drop_missing: true,
            range_filter: None,
            min_degree: 2,
        }
    }
}

/// A cleaned network with matcher covariates.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub network: Network,
    pub covariates: DyadCovariates,
    /// Original 1-based id of each kept node.
    pub node_ids: Vec<usize>,
    pub attribute_names: Vec<String>,
}

/// Loads an edge list and optional attribute file and applies `cleaning`.
/// The degree filter is iterated until no node falls below the threshold.
pub fn load_dataset(edges: &Path, attributes: Option<&Path>, cleaning: &Cleaning) -> Result<Dataset> {
    let edge_list = read_edge_list(edges)?;
    let table = attributes
        .map(|p| read_attributes(p, &cleaning.missing))
        .transpose()?;
    let max_edge = edge_list.iter().map(|&(_, b)| b).max().unwrap_or(0);
    let max_attr = table
        .as_ref()
        .and_then(|t| t.rows.keys().copied().max())
        .unwrap_or(0);
    let universe = max_edge.max(max_attr);
    let mut keep = vec![true; universe + 1];
    keep[0] = false;

    if let Some(table) = &table {
        let range = match &cleaning.range_filter {
            Some(f) => Some((
                table.column(&f.attribute).ok_or_else(|| {
                    Error::InvalidArgument(format!("no attribute named {:?}", f.attribute))
                })?,
                f,
            )),
            None => None,
        };
        for (id, k) in keep.iter_mut().enumerate().skip(1) {
            let row = table.rows.get(&id);
            if cleaning.drop_missing && row.is_none_or(|r| r.iter().any(Option::is_none)) {
                *k = false;
                continue;
            }
            if let (Some((col, f)), Some(row)) = (range, row) {
                let inside = row[col]
                    .as_deref()
                    .and_then(|v| v.parse::<f64>().ok())
                    .is_some_and(|v| v >= f.min && v <= f.max);
                if !inside {
                    *k = false;
                }
            }
        }
    }

    // Degree filter to a fixed point.
    let mut degree = vec![0usize; universe + 1];
    loop {
        degree.iter_mut().for_each(|d| *d = 0);
        for &(a, b) in &edge_list {
            if keep[a] && keep[b] {
                degree[a] += 1;
                degree[b] += 1;
            }
        }
        let mut dropped = false;
        for id in 1..=universe {
            if keep[id] && degree[id] < cleaning.min_degree {
                keep[id] = false;
                dropped = true;
            }
        }
        if !dropped {
            break;
        }
    }

    let node_ids: Vec<usize> = (1..=universe).filter(|&id| keep[id]).collect();
    let mut index = vec![usize::MAX; universe + 1];
    for (i, &id) in node_ids.iter().enumerate() {
        index[id] = i;
    }
    let network = Network::from_edges(
        node_ids.len(),
        edge_list
            .iter()
            .filter(|&&(a, b)| keep[a] && keep[b])
            .map(|&(a, b)| (index[a], index[b])),
    )?;
    let (covariates, attribute_names) = match &table {
        Some(table) => {
            let mut dictionaries: Vec<HashMap<String, u32>> = vec![HashMap::new(); table.names.len()];
            let mut codes = Vec::with_capacity(node_ids.len());
            for (i, &id) in node_ids.iter().enumerate() {
                let row = table.rows.get(&id);
                let mut out = Vec::with_capacity(table.names.len());
                for (l, dict) in dictionaries.iter_mut().enumerate() {
                    let code = match row.and_then(|r| r[l].as_ref()) {
                        Some(v) => {
                            let next = dict.len() as u32;
                            *dict.entry(v.clone()).or_insert(next)
                        }
                        // A missing value matches nobody.
                        None => u32::MAX - i as u32,
                    };
                    out.push(code);
                }
                codes.push(out);
            }
            (DyadCovariates::attribute_matcher(&codes)?, table.names.clone())
        }
        None => (DyadCovariates::none(node_ids.len()), Vec::new()),
    };
    Ok(Dataset {
        network,
        covariates,
        node_ids,
        attribute_names,
    })
}

pub fn write_edge_list(network: &Network, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# {} nodes, {} edges", network.n(), network.edge_count())?;
    for (i, j) in network.edges() {
        writeln!(out, "{} {}", i + 1, j + 1)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `node label` rows, both 1-based.
pub fn write_labels(labels: &Labels, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "node label")?;
    for (i, g) in labels.to_one_based().into_iter().enumerate() {
        writeln!(out, "{} {}", i + 1, g)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the format written by [`write_labels`]. Without `k`, the largest
/// label present sets K.
pub fn read_labels(path: &Path, k: Option<usize>) -> Result<Labels> {
    let mut z = Vec::new();
    for (line, body) in content_lines(path)?.skip(1) {
        let fields: Vec<&str> = body.split_whitespace().collect();
        let parse = |s: &str| s.parse::<usize>().map_err(|_| parse_error(path, line, format!("bad number {s:?}")));
        if fields.len() != 2 {
            return Err(parse_error(path, line, "expected node and label"));
        }
        let (node, g) = (parse(fields[0])?, parse(fields[1])?);
        if node != z.len() + 1 {
            return Err(parse_error(path, line, format!("expected node {}", z.len() + 1)));
        }
        z.push(g);
    }
    let k = k.unwrap_or_else(|| z.iter().copied().max().unwrap_or(1));
    Labels::from_one_based(k, &z)
}

/// What `generate` stores next to the edge list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub design: SimDesign,
    pub truth: Params,
    pub realized_degree: f64,
}

pub const INSTANCE_JSON: &str = "instance.json";
pub const EDGES_TXT: &str = "edges.txt";
pub const LABELS_TXT: &str = "labels.txt";

/// Writes `edges.txt`, `labels.txt` and `instance.json` into `dir`. The
/// covariates are not written: they are regenerated from the design.
pub fn save_instance(instance: &SimInstance, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_edge_list(&instance.network, &dir.join(EDGES_TXT))?;
    write_labels(&instance.labels, &dir.join(LABELS_TXT))?;
    let file = InstanceFile {
        design: instance.design.clone(),
        truth: instance.truth.clone(),
        realized_degree: instance.realized_degree(),
    };
    fs::write(dir.join(INSTANCE_JSON), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_instance(dir: &Path) -> Result<SimInstance> {
    let file: InstanceFile = serde_json::from_str(&fs::read_to_string(dir.join(INSTANCE_JSON))?)?;
    let n = file.design.n;
    let edges = read_edge_list(&dir.join(EDGES_TXT))?;
    if let Some(&(_, b)) = edges.iter().max_by_key(|e| e.1) {
        if b > n {
            return Err(Error::NodeOutOfRange { index: b, n });
        }
    }
    let network = Network::from_edges(n, edges.into_iter().map(|(a, b)| (a - 1, b - 1)))?;
    let labels = read_labels(&dir.join(LABELS_TXT), Some(file.design.k()))?;
    Ok(SimInstance {
        covariates: file.design.covariates()?,
        design: file.design,
        truth: file.truth,
        labels,
        network,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// One row per iteration: parameters flattened as `theta_a_b`, `beta_l`,
/// `pi_k` (1-based), then the Q values and timing.
pub fn write_trajectory_csv(trajectory: &[IterationRecord], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    if let Some(first) = trajectory.first() {
        let mut header = vec!["iteration".to_string()];
        header.extend(param_columns(&first.params));
        header.extend(["q_start", "q_value", "change", "newton_iterations", "seconds"].map(String::from));
        w.write_record(&header)?;
    }
    for r in trajectory {
        let mut row = vec![r.iteration.to_string()];
        row.extend(param_values(&r.params));
        row.extend([
            r.q_start.to_string(),
            r.q_value.to_string(),
            r.change.to_string(),
            r.newton_iterations.to_string(),
            r.seconds.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn param_columns(params: &Params) -> Vec<String> {
    let k = params.k();
    let mut cols = Vec::new();
    for a in 0..k {
        for b in a..k {
            cols.push(format!("theta_{}_{}", a + 1, b + 1));
        }
    }
    cols.extend((0..params.p()).map(|l| format!("beta_{}", l + 1)));
    cols.extend((0..k).map(|g| format!("pi_{}", g + 1)));
    cols
}

pub fn param_values(params: &Params) -> Vec<String> {
    let k = params.k();
    let mut vals = Vec::new();
    for a in 0..k {
        for b in a..k {
            vals.push(params.theta(a, b).to_string());
        }
    }
    vals.extend(params.beta().iter().map(f64::to_string));
    vals.extend(params.pi().iter().map(f64::to_string));
    vals
}

pub fn write_ledger_csv(ledger: &RoundLedger, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["round", "worker", "lineage", "sent_to", "started", "finished"])?;
    for e in &ledger.entries {
        w.write_record([
            e.round.to_string(),
            (e.worker + 1).to_string(),
            (e.lineage + 1).to_string(),
            (e.sent_to + 1).to_string(),
            e.started.to_string(),
            e.finished.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bic_csv(scan: &BicScan, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "log_lik", "std_error", "penalty", "bic", "error"])?;
    for r in &scan.rows {
        w.write_record([
            r.k.to_string(),
            r.log_lik.to_string(),
            r.std_error.to_string(),
            r.penalty.to_string(),
            r.bic.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `dir/name`, creating `dir` if needed.
pub fn output_path(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn path_graph_filters_away() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write(dir.path(), "e.txt", "1 2\n2 3\n");
        let d = load_dataset(&edges, None, &Cleaning::default()).unwrap();
        assert_eq!(d.network.n(), 0);
    }

    #[test]
    fn degree_filter_reaches_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        // Triangle 1-2-3 with a tail 3-4-5: dropping 5 makes 4 a leaf.
        let edges = write(dir.path(), "e.txt", "# tail\n1 2\n2 3\n1 3\n3 4\n4 5\n2 1\n");
        let d = load_dataset(&edges, None, &Cleaning::default()).unwrap();
        assert_eq!(d.node_ids, vec![1, 2, 3]);
        assert_eq!(d.network.edge_count(), 3);
    }

    #[test]
    fn matcher_covariates_from_attributes() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write(dir.path(), "e.txt", "1 2\n2 3\n1 3\n");
        let attrs = write(dir.path(), "a.txt", "id dorm year\n1 202 2008\n2 202 2009\n3 203 2009\n");
        let d = load_dataset(&edges, Some(&attrs), &Cleaning::default()).unwrap();
        assert_eq!(d.attribute_names, vec!["dorm", "year"]);
        assert_eq!(d.covariates.covariate(0, 1), &[1.0, 0.0]);
        assert_eq!(d.covariates.covariate(1, 2), &[0.0, 1.0]);
    }

    #[test]
    fn missing_and_range_filters() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write(dir.path(), "e.txt", "1 2\n2 3\n1 3\n1 4\n2 4\n3 4\n4 5\n5 1\n5 2\n");
        let attrs = write(dir.path(), "a.txt", "dorm year\n1 1 2008\n2 1 2009\n3 2 2009\n4 NA 2009\n5 2 1990\n");
        let cleaning = Cleaning {
            range_filter: Some(RangeFilter { attribute: "year".into(), min: 2000.0, max: 2010.0 }),
            ..Cleaning::default()
        };
        let d = load_dataset(&edges, Some(&attrs), &cleaning).unwrap();
        assert_eq!(d.node_ids, vec![1, 2, 3]);
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write(dir.path(), "e.txt", "1 2\n\n2 x\n");
        match read_edge_list(&edges) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn instance_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let design = SimDesign::standard(40, vec![0.5, 0.5, 0.0], 0.1, 6.0, 3);
        let design = SimDesign { pi: vec![0.3, 0.3, 0.4], ..design };
        let inst = crate::datagen::simulate(&design).unwrap();
        save_instance(&inst, dir.path()).unwrap();
        let back = load_instance(dir.path()).unwrap();
        assert_eq!(back.network, inst.network);
        assert_eq!(back.labels, inst.labels);
        assert_eq!(back.truth, inst.truth);
        assert_eq!(back.covariates.code(3, 17), inst.covariates.code(3, 17));
    }
}
