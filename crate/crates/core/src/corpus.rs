//! Paired-chain FASTA ingestion and delimited assay tables.
//!
//! FASTA headers carry the pairing: `><id>|chain=H` / `><id>|chain=L`.
//! Both chains of a record must be present exactly once; records are kept
//! sorted by id so every downstream iteration order is deterministic.

use crate::seq::{encode_pair, SeqError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("record {id}: chain {chain} appears more than once")]
    DuplicateChain { id: String, chain: char },
    #[error("record {id}: missing chain {missing}")]
    UnpairedChain { id: String, missing: char },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("record {id}: {source}")]
    Record { id: String, source: SeqError },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("line {line}, column {col}: cell {cell:?} is not a number")]
    NonNumericCell { line: usize, col: usize, cell: String },
    #[error("id {0} not present in the corpus")]
    UnknownId(String),
    #[error("assay {0} not present in the table")]
    UnknownAssay(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::DuplicateChain { .. } => "duplicate-chain",
            CorpusError::UnpairedChain { .. } => "unpaired-chain",
            CorpusError::Parse { .. } => "parse",
            CorpusError::Record { source, .. } => source.code(),
            CorpusError::DuplicateId(_) => "duplicate-id",
            CorpusError::NonNumericCell { .. } => "non-numeric-cell",
            CorpusError::UnknownId(_) => "unknown-id",
            CorpusError::UnknownAssay(_) => "unknown-assay",
            CorpusError::Io(_) => "io",
        }
    }
}

/// One paired record. Chains are stored uppercase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub heavy: String,
    pub light: String,
}

impl CorpusRecord {
    /// `heavy|light`, the canonical form used for identity computations.
    pub fn concat(&self) -> String {
        format!("{}|{}", self.heavy, self.light)
    }
}

/// A validated, id-sorted set of paired records plus length statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedCorpus {
    records: Vec<CorpusRecord>,
    // Histogram over concatenated length (heavy + light + 1).
    length_histogram: BTreeMap<usize, u64>,
    // Heavy-length histogram conditioned on concatenated length.
    heavy_by_total: BTreeMap<usize, BTreeMap<usize, u64>>,
}

impl PairedCorpus {
    /// Validate records (residues, non-empty chains, unique ids), sort by id,
    /// and build length histograms.
    pub fn from_records(mut records: Vec<CorpusRecord>) -> Result<Self, CorpusError> {
        for r in &mut records {
            r.heavy = r.heavy.to_ascii_uppercase();
            r.light = r.light.to_ascii_uppercase();
            encode_pair(&r.heavy, &r.light).map_err(|source| CorpusError::Record {
                id: r.id.clone(),
                source,
            })?;
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        for w in records.windows(2) {
            if w[0].id == w[1].id {
                return Err(CorpusError::DuplicateId(w[0].id.clone()));
            }
        }
        let mut length_histogram = BTreeMap::new();
        let mut heavy_by_total: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
        for r in &records {
            let total = r.heavy.len() + r.light.len() + 1;
            *length_histogram.entry(total).or_insert(0) += 1;
            *heavy_by_total
                .entry(total)
                .or_default()
                .entry(r.heavy.len())
                .or_insert(0) += 1;
        }
        Ok(PairedCorpus {
            records,
            length_histogram,
            heavy_by_total,
        })
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusRecord> {
        self.records
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Histogram over observed concatenated lengths.
    pub fn length_histogram(&self) -> &BTreeMap<usize, u64> {
        &self.length_histogram
    }

    /// Heavy-length histogram among records with the given concatenated
    /// length.
    pub fn heavy_lengths_for(&self, total: usize) -> Option<&BTreeMap<usize, u64>> {
        self.heavy_by_total.get(&total)
    }
}

fn parse_header(line: &str, lineno: usize) -> Result<(String, char), CorpusError> {
    let body = line.trim_start_matches('>').trim();
    let (id, rest) = body.split_once('|').ok_or_else(|| CorpusError::Parse {
        line: lineno,
        msg: format!("header {body:?} lacks a |chain= field"),
    })?;
    let id = id.trim();
    if id.is_empty() {
        return Err(CorpusError::Parse {
            line: lineno,
            msg: "empty record id".into(),
        });
    }
    let chain = match rest.trim() {
        "chain=H" => 'H',
        "chain=L" => 'L',
        other => {
            return Err(CorpusError::Parse {
                line: lineno,
                msg: format!("expected chain=H or chain=L, found {other:?}"),
            })
        }
    };
    Ok((id.to_string(), chain))
}

/// Parse paired FASTA from a reader. See [`load_paired_fasta`].
pub fn parse_paired_fasta<R: BufRead>(reader: R) -> Result<PairedCorpus, CorpusError> {
    // (heavy, light) per id, in first-seen order for stable error reporting.
    let mut chains: BTreeMap<String, (Option<String>, Option<String>)> = BTreeMap::new();
    let mut current: Option<(String, char, String, usize)> = None;

    let flush = |cur: Option<(String, char, String, usize)>,
                     chains: &mut BTreeMap<String, (Option<String>, Option<String>)>|
     -> Result<(), CorpusError> {
        if let Some((id, chain, seq, header_line)) = cur {
            if seq.is_empty() {
                return Err(CorpusError::Parse {
                    line: header_line,
                    msg: format!("record {id} chain {chain} has no sequence"),
                });
            }
            let entry = chains.entry(id.clone()).or_insert((None, None));
            let slot = if chain == 'H' { &mut entry.0 } else { &mut entry.1 };
            if slot.is_some() {
                return Err(CorpusError::DuplicateChain { id, chain });
            }
            *slot = Some(seq);
        }
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(stripped) = trimmed.strip_prefix('>') {
            flush(current.take(), &mut chains)?;
            let (id, chain) = parse_header(stripped, lineno)?;
            current = Some((id, chain, String::new(), lineno));
        } else {
            match current.as_mut() {
                Some((_, _, seq, _)) => seq.push_str(trimmed),
                None => {
                    return Err(CorpusError::Parse {
                        line: lineno,
                        msg: "sequence data before any header".into(),
                    })
                }
            }
        }
    }
    flush(current.take(), &mut chains)?;

    let mut records = Vec::with_capacity(chains.len());
    for (id, (heavy, light)) in chains {
        match (heavy, light) {
            (Some(h), Some(l)) => records.push(CorpusRecord {
                id,
                heavy: h,
                light: l,
            }),
            (None, _) => return Err(CorpusError::UnpairedChain { id, missing: 'H' }),
            (_, None) => return Err(CorpusError::UnpairedChain { id, missing: 'L' }),
        }
    }
    PairedCorpus::from_records(records)
}

/// Load a paired-chain FASTA file.
///
/// Loading is deterministic: the same bytes always produce the same corpus,
/// and records come out sorted by id regardless of file order.
pub fn load_paired_fasta(path: impl AsRef<Path>) -> Result<PairedCorpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_paired_fasta(BufReader::new(file))
}

/// Write a corpus in the paired FASTA layout (H record then L record per id).
pub fn write_paired_fasta<W: Write>(corpus: &PairedCorpus, mut w: W) -> std::io::Result<()> {
    for r in corpus.records() {
        writeln!(w, ">{}|chain=H", r.id)?;
        writeln!(w, "{}", r.heavy)?;
        writeln!(w, ">{}|chain=L", r.id)?;
        writeln!(w, "{}", r.light)?;
    }
    Ok(())
}

/// Assay measurements keyed by record id. Missing values stay missing;
/// nothing is ever imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct AssayTable {
    assay_names: Vec<String>,
    // Sorted by id; values align with assay_names.
    rows: Vec<(String, Vec<Option<f64>>)>,
}

impl AssayTable {
    pub fn assay_names(&self) -> &[String] {
        &self.assay_names
    }

    pub fn assay_index(&self, name: &str) -> Result<usize, CorpusError> {
        self.assay_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CorpusError::UnknownAssay(name.to_string()))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[Option<f64>])> {
        self.rows.iter().map(|(id, v)| (id.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Value for (id, assay); `None` when the cell is missing or the id is
    /// absent from the table.
    pub fn value(&self, id: &str, assay_idx: usize) -> Option<f64> {
        self.rows
            .binary_search_by(|(rid, _)| rid.as_str().cmp(id))
            .ok()
            .and_then(|i| self.rows[i].1.get(assay_idx).copied().flatten())
    }

    /// Ids with a measured value for the assay, in sorted order.
    pub fn labeled_ids(&self, assay_idx: usize) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|(_, v)| v.get(assay_idx).copied().flatten().is_some())
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Every table id must exist in the corpus.
    pub fn validate_against(&self, corpus: &PairedCorpus) -> Result<(), CorpusError> {
        for (id, _) in &self.rows {
            if corpus.get(id).is_none() {
                return Err(CorpusError::UnknownId(id.clone()));
            }
        }
        Ok(())
    }
}

/// Parse an assay table from a reader. See [`load_assay_table`].
pub fn parse_assay_table<R: BufRead>(reader: R) -> Result<AssayTable, CorpusError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(CorpusError::Parse {
        line: 1,
        msg: "empty table".into(),
    })?;
    let header = header?;
    let delim = if header.contains('\t') { '\t' } else { ',' };
    let cols: Vec<&str> = header.trim_end().split(delim).map(str::trim).collect();
    if cols.len() < 2 || !cols[0].eq_ignore_ascii_case("id") {
        return Err(CorpusError::Parse {
            line: 1,
            msg: "header must be id,<assay>[,<assay>...]".into(),
        });
    }
    let assay_names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    {
        let mut names = assay_names.clone();
        names.sort();
        names.dedup();
        if names.len() != assay_names.len() {
            return Err(CorpusError::Parse {
                line: 1,
                msg: "duplicate assay column".into(),
            });
        }
    }

    let mut rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.trim_end().split(delim).map(str::trim).collect();
        if cells.len() != cols.len() {
            return Err(CorpusError::Parse {
                line: lineno,
                msg: format!("expected {} cells, found {}", cols.len(), cells.len()),
            });
        }
        let id = cells[0];
        if id.is_empty() {
            return Err(CorpusError::Parse {
                line: lineno,
                msg: "empty id cell".into(),
            });
        }
        let mut values = Vec::with_capacity(assay_names.len());
        for (j, cell) in cells[1..].iter().enumerate() {
            if cell.is_empty() || cell.eq_ignore_ascii_case("n/a") {
                values.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(Some(v)),
                // Column numbers are 1-based file coordinates (id column = 1).
                _ => {
                    return Err(CorpusError::NonNumericCell {
                        line: lineno,
                        col: j + 2,
                        cell: cell.to_string(),
                    })
                }
            }
        }
        rows.push((id.to_string(), values));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(CorpusError::DuplicateId(w[0].0.clone()));
        }
    }
    Ok(AssayTable { assay_names, rows })
}

/// Load a delimited assay table (`id,<assay>,...`).
///
/// The delimiter is `\t` when the header contains a tab, `,` otherwise.
/// Empty cells and `n/a` (any case) are missing values.
pub fn load_assay_table(path: impl AsRef<Path>) -> Result<AssayTable, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_assay_table(BufReader::new(file))
}

/// Write an assay table as CSV, missing cells empty.
pub fn write_assay_table<W: Write>(table: &AssayTable, mut w: W) -> std::io::Result<()> {
    writeln!(w, "id,{}", table.assay_names().join(","))?;
    for (id, values) in table.rows() {
        let cells: Vec<String> = values
            .iter()
            .map(|v| match v {
                Some(x) => format!("{x}"),
                None => String::new(),
            })
            .collect();
        writeln!(w, "{},{}", id, cells.join(","))?;
    }
    Ok(())
}

/// Build an assay table in memory; used by the toy generator and tests.
pub fn assay_table_from_rows(
    assay_names: Vec<String>,
    mut rows: Vec<(String, Vec<Option<f64>>)>,
) -> Result<AssayTable, CorpusError> {
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(CorpusError::DuplicateId(w[0].0.clone()));
        }
    }
    for (_, v) in &rows {
        if v.len() != assay_names.len() {
            return Err(CorpusError::Parse {
                line: 0,
                msg: "row width does not match assay count".into(),
            });
        }
    }
    Ok(AssayTable { assay_names, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn corpus(text: &str) -> Result<PairedCorpus, CorpusError> {
        parse_paired_fasta(Cursor::new(text))
    }

    #[test]
    fn parses_paired_records_sorted_by_id() {
        let c = corpus(
            ">b|chain=H\nACDE\n>b|chain=L\nFGH\n>a|chain=L\nWY\n>a|chain=H\nIKL\n",
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.records()[0].id, "a");
        assert_eq!(c.records()[0].heavy, "IKL");
        assert_eq!(c.records()[0].light, "WY");
        assert_eq!(c.records()[1].id, "b");
        assert_eq!(c.get("b").unwrap().concat(), "ACDE|FGH");
        assert!(c.get("missing").is_none());
    }

    #[test]
    fn multiline_sequences_and_blank_lines() {
        let c = corpus(">x|chain=H\nAC\nDE\n\n>x|chain=L\nFG\n").unwrap();
        assert_eq!(c.records()[0].heavy, "ACDE");
    }

    #[test]
    fn lowercase_sequences_are_canonicalized() {
        let c = corpus(">x|chain=H\nacde\n>x|chain=L\nfg\n").unwrap();
        assert_eq!(c.records()[0].heavy, "ACDE");
        assert_eq!(c.records()[0].light, "FG");
    }

    #[test]
    fn rejects_unpaired_and_duplicate_chains() {
        let err = corpus(">x|chain=H\nACDE\n").unwrap_err();
        assert!(matches!(err, CorpusError::UnpairedChain { missing: 'L', .. }));
        assert_eq!(err.code(), "unpaired-chain");

        let err = corpus(">x|chain=H\nAC\n>x|chain=H\nDE\n>x|chain=L\nFG\n").unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateChain { chain: 'H', .. }));
        assert_eq!(err.code(), "duplicate-chain");
    }

    #[test]
    fn rejects_malformed_headers_with_line_numbers() {
        let err = corpus(">x chain=H\nACDE\n").unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let err = corpus(">x|chain=H\nAC\n>y|chain=Q\nDE\n").unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = corpus("ACDE\n").unwrap_err();
        assert_eq!(err.code(), "parse");
    }

    #[test]
    fn rejects_invalid_residues_via_record_validation() {
        let err = corpus(">x|chain=H\nACXE\n>x|chain=L\nFG\n").unwrap_err();
        assert_eq!(err.code(), "invalid-residue");
    }

    #[test]
    fn length_histograms_cover_all_records() {
        let c = corpus(
            ">a|chain=H\nACDE\n>a|chain=L\nFGH\n\
             >b|chain=H\nACDF\n>b|chain=L\nFGY\n\
             >c|chain=H\nAC\n>c|chain=L\nFGHIK\n",
        )
        .unwrap();
        let hist = c.length_histogram();
        assert_eq!(hist.get(&8), Some(&3));
        assert_eq!(hist.values().sum::<u64>(), c.len() as u64);
        let heavy = c.heavy_lengths_for(8).unwrap();
        assert_eq!(heavy.get(&4), Some(&2));
        assert_eq!(heavy.get(&2), Some(&1));
        assert!(c.heavy_lengths_for(99).is_none());
    }

    #[test]
    fn fasta_roundtrip_is_lossless() {
        let text = ">a|chain=H\nIKL\n>a|chain=L\nWY\n>b|chain=H\nACDE\n>b|chain=L\nFGH\n";
        let c = corpus(text).unwrap();
        let mut out = Vec::new();
        write_paired_fasta(&c, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn load_is_deterministic() {
        let text = ">b|chain=H\nACDE\n>b|chain=L\nFGH\n>a|chain=H\nIK\n>a|chain=L\nWY\n";
        let c1 = corpus(text).unwrap();
        let c2 = corpus(text).unwrap();
        assert_eq!(c1, c2);
    }

    fn table(text: &str) -> Result<AssayTable, CorpusError> {
        parse_assay_table(Cursor::new(text))
    }

    #[test]
    fn parses_csv_with_missing_cells() {
        let t = table("id,hic,acsins\na,1.5,2.0\nb,,0.5\nc,n/a,N/A\n").unwrap();
        assert_eq!(t.assay_names(), &["hic", "acsins"]);
        let hic = t.assay_index("hic").unwrap();
        let acsins = t.assay_index("acsins").unwrap();
        assert_eq!(t.value("a", hic), Some(1.5));
        assert_eq!(t.value("b", hic), None);
        assert_eq!(t.value("b", acsins), Some(0.5));
        assert_eq!(t.value("c", acsins), None);
        assert_eq!(t.value("zzz", hic), None);
        assert_eq!(t.labeled_ids(hic), vec!["a"]);
        assert!(t.assay_index("nope").is_err());
    }

    #[test]
    fn parses_tsv_when_header_has_tabs() {
        let t = table("id\thic\na\t1.25\n").unwrap();
        assert_eq!(t.value("a", 0), Some(1.25));
    }

    #[test]
    fn rejects_non_numeric_cells_with_coordinates() {
        let err = table("id,hic\na,abc\n").unwrap_err();
        match &err {
            CorpusError::NonNumericCell { line, col, cell } => {
                assert_eq!((*line, *col), (2, 2));
                assert_eq!(cell, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(err.code(), "non-numeric-cell");
        // NaN and infinities are not valid measurements.
        assert!(table("id,hic\na,NaN\n").is_err());
        assert!(table("id,hic\na,inf\n").is_err());
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_headers() {
        let err = table("id,hic\na,1\na,2\n").unwrap_err();
        assert_eq!(err.code(), "duplicate-id");
        assert!(table("name,hic\na,1\n").is_err());
        assert!(table("id,hic,hic\na,1,2\n").is_err());
        assert!(table("id,hic\na,1,2\n").is_err());
    }

    #[test]
    fn validate_against_corpus() {
        let c = corpus(">a|chain=H\nACDE\n>a|chain=L\nFG\n").unwrap();
        let t = table("id,hic\na,1\n").unwrap();
        t.validate_against(&c).unwrap();
        let t = table("id,hic\nzz,1\n").unwrap();
        let err = t.validate_against(&c).unwrap_err();
        assert_eq!(err.code(), "unknown-id");
    }

    #[test]
    fn assay_table_csv_roundtrip() {
        let t = table("id,hic,acsins\na,1.5,\nb,2,0.25\n").unwrap();
        let mut out = Vec::new();
        write_assay_table(&t, &mut out).unwrap();
        let t2 = table(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(t, t2);
    }
}
