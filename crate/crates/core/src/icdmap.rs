//! ICD-9 → ICD-10 → ICD-11 code conversion with exactness and one-to-one
//! constraints. Anything that cannot be converted automatically goes to a
//! manual review queue.
//!
//! Mapping tables are TSV files with four columns,
//! `source<TAB>target<TAB>exact<TAB>mappable`, flags `0` or `1`. To convert
//! the CMS fixed-width GEM files, the "approximate" flag inverts into `exact`
//! and the "no map" flag inverts into `mappable`. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum IcdError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown version flag {value:?} (expected 9 or 10)")]
    UnknownVersion { line: usize, value: String },
}

fn read(path: &Path) -> Result<String, IcdError> {
    std::fs::read_to_string(path).map_err(|e| IcdError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn normalize_code(code: &str) -> String {
    code.trim().to_uppercase()
}

/// Content lines with their 1-based line numbers.
fn data_lines(input: &str) -> impl Iterator<Item = (usize, &str)> {
    input
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GemRow {
    pub source: String,
    pub target: String,
    pub exact: bool,
    pub mappable: bool,
}

fn parse_flag(value: &str, name: &str, line: usize) -> Result<bool, IcdError> {
    match value.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(IcdError::Parse {
            line,
            message: format!("{name} flag must be 0 or 1, got {other:?}"),
        }),
    }
}

fn parse_code(value: &str, name: &str, line: usize) -> Result<String, IcdError> {
    let code = normalize_code(value);
    if code.is_empty() {
        return Err(IcdError::Parse {
            line,
            message: format!("empty {name} code"),
        });
    }
    Ok(code)
}

/// Rows in file order.
pub fn parse_gem(input: &str) -> Result<Vec<GemRow>, IcdError> {
    data_lines(input)
        .map(|(line, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 4 {
                return Err(IcdError::Parse {
                    line,
                    message: format!("expected 4 tab-separated columns, found {}", cols.len()),
                });
            }
            Ok(GemRow {
                source: parse_code(cols[0], "source", line)?,
                target: parse_code(cols[1], "target", line)?,
                exact: parse_flag(cols[2], "exact", line)?,
                mappable: parse_flag(cols[3], "mappable", line)?,
            })
        })
        .collect()
}

pub fn load_gem(path: &Path) -> Result<Vec<GemRow>, IcdError> {
    parse_gem(&read(path)?)
}

pub fn serialize_gem(rows: &[GemRow]) -> String {
    rows.iter()
        .map(|r| {
            format!(
                "{}\t{}\t{}\t{}\n",
                r.source,
                r.target,
                u8::from(r.exact),
                u8::from(r.mappable)
            )
        })
        .collect()
}

pub fn filter_exact_mappable(rows: &[GemRow]) -> Vec<GemRow> {
    rows.iter()
        .filter(|r| r.exact && r.mappable)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Icd9To10,
    Icd10To11,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Icd9To10 => "icd9_to_10",
            Stage::Icd10To11 => "icd10_to_11",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Resolved(String),
    /// Two or more distinct exact, mappable targets.
    WithheldMultiCandidate(Vec<String>),
    /// The source has rows, but none is both exact and mappable. Carries the
    /// raw targets for the reviewer.
    WithheldInexact(Vec<String>),
    /// The source does not appear in the table at all.
    WithheldNoCandidate,
    /// Listed by the operator as a non-disease concept.
    ExcludedNonDisease,
}

impl Status {
    pub fn is_withheld(&self) -> bool {
        matches!(
            self,
            Status::WithheldMultiCandidate(_)
                | Status::WithheldInexact(_)
                | Status::WithheldNoCandidate
        )
    }

    pub fn candidates(&self) -> &[String] {
        match self {
            Status::Resolved(_) | Status::WithheldNoCandidate | Status::ExcludedNonDisease => &[],
            Status::WithheldMultiCandidate(c) | Status::WithheldInexact(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingDecision {
    pub source: String,
    pub status: Status,
    pub stage: Stage,
}

/// Exact-and-mappable targets plus all raw targets, per source code.
#[derive(Debug, Clone)]
pub struct StageTable {
    stage: Stage,
    kept: BTreeMap<String, BTreeSet<String>>,
    raw: BTreeMap<String, BTreeSet<String>>,
}

impl StageTable {
    pub fn new(rows: &[GemRow], stage: Stage) -> Self {
        let mut kept: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut raw: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for r in rows {
            raw.entry(r.source.clone())
                .or_default()
                .insert(r.target.clone());
            if r.exact && r.mappable {
                kept.entry(r.source.clone())
                    .or_default()
                    .insert(r.target.clone());
            }
        }
        Self { stage, kept, raw }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn decide(&self, source: &str) -> MappingDecision {
        let status = match self.kept.get(source) {
            Some(targets) if targets.len() == 1 => {
                Status::Resolved(targets.iter().next().expect("one").clone())
            }
            Some(targets) => Status::WithheldMultiCandidate(targets.iter().cloned().collect()),
            None => match self.raw.get(source) {
                Some(targets) => Status::WithheldInexact(targets.iter().cloned().collect()),
                None => Status::WithheldNoCandidate,
            },
        };
        MappingDecision {
            source: source.to_string(),
            status,
            stage: self.stage(),
        }
    }
}

/// One decision per distinct source, in source order. `rows` are expected to
/// be filtered already; identical rows collapse.
pub fn enforce_one_to_one(rows: &[GemRow], stage: Stage) -> Vec<MappingDecision> {
    let mut targets: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in rows {
        targets.entry(&r.source).or_default().insert(&r.target);
    }
    targets
        .into_iter()
        .map(|(source, t)| MappingDecision {
            source: source.to_string(),
            status: if t.len() == 1 {
                Status::Resolved(t.into_iter().next().expect("one").to_string())
            } else {
                Status::WithheldMultiCandidate(t.into_iter().map(String::from).collect())
            },
            stage,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Version {
    Icd9,
    Icd10,
}

impl Version {
    pub fn parse(value: &str) -> Option<Self> {
        match value.trim() {
            "9" => Some(Version::Icd9),
            "10" => Some(Version::Icd10),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InputCode {
    pub code: String,
    pub version: Version,
}

/// `code<TAB>version` lines, version `9` or `10`.
pub fn parse_inputs(input: &str) -> Result<Vec<InputCode>, IcdError> {
    data_lines(input)
        .map(|(line, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 2 {
                return Err(IcdError::Parse {
                    line,
                    message: format!("expected 2 tab-separated columns, found {}", cols.len()),
                });
            }
            let version = Version::parse(cols[1]).ok_or_else(|| IcdError::UnknownVersion {
                line,
                value: cols[1].to_string(),
            })?;
            Ok(InputCode {
                code: parse_code(cols[0], "input", line)?,
                version,
            })
        })
        .collect()
}

pub fn load_inputs(path: &Path) -> Result<Vec<InputCode>, IcdError> {
    parse_inputs(&read(path)?)
}

/// Operator-supplied codes for concepts that are not diseases.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DenyList(BTreeSet<String>);

impl DenyList {
    /// One code per line.
    pub fn parse(input: &str) -> Self {
        Self(data_lines(input).map(|(_, l)| normalize_code(l)).collect())
    }

    pub fn load(path: &Path) -> Result<Self, IcdError> {
        Ok(Self::parse(&read(path)?))
    }

    pub fn contains(&self, code: &str) -> bool {
        self.0.contains(code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainDecision {
    pub input: InputCode,
    pub status: Status,
    /// The stage that resolved, withheld or excluded the code.
    pub stage: Stage,
}

/// Runs every input through the chain. ICD-9 codes pass through both stages,
/// ICD-10 codes only through the second; a withheld stage stops the chain.
/// Inputs are de-duplicated and returned sorted by code.
pub fn chain_to_icd11(
    icd9_to_10: &StageTable,
    icd10_to_11: &StageTable,
    inputs: &[InputCode],
    deny: &DenyList,
) -> Vec<ChainDecision> {
    let unique: BTreeSet<&InputCode> = inputs.iter().collect();
    unique
        .into_iter()
        .map(|input| {
            let first_stage = match input.version {
                Version::Icd9 => Stage::Icd9To10,
                Version::Icd10 => Stage::Icd10To11,
            };
            let done = |status, stage| ChainDecision {
                input: input.clone(),
                status,
                stage,
            };
            if deny.contains(&input.code) {
                return done(Status::ExcludedNonDisease, first_stage);
            }
            let icd10 = match input.version {
                Version::Icd10 => input.code.clone(),
                Version::Icd9 => match icd9_to_10.decide(&input.code) {
                    MappingDecision {
                        status: Status::Resolved(t),
                        ..
                    } => t,
                    d => return done(d.status, d.stage),
                },
            };
            let d = icd10_to_11.decide(&icd10);
            match d.status {
                Status::Resolved(t) if deny.contains(&t) || deny.contains(&icd10) => {
                    done(Status::ExcludedNonDisease, d.stage)
                }
                status => done(status, d.stage),
            }
        })
        .collect()
}

/// Counts over a chain run. `withheld = inputs - resolved - excluded`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChainSummary {
    pub inputs: usize,
    pub resolved: usize,
    pub withheld: usize,
    pub excluded: usize,
}

pub fn summarize(decisions: &[ChainDecision]) -> ChainSummary {
    let mut s = ChainSummary {
        inputs: decisions.len(),
        ..Default::default()
    };
    for d in decisions {
        match &d.status {
            Status::Resolved(_) => s.resolved += 1,
            Status::ExcludedNonDisease => s.excluded += 1,
            _ => s.withheld += 1,
        }
    }
    s
}

pub const RESOLVED_HEADER: &str = "source\ticd11";
pub const QUEUE_HEADER: &str = "source\tstage\tcandidates";

pub fn resolved_tsv(decisions: &[ChainDecision]) -> String {
    let mut out = format!("{RESOLVED_HEADER}\n");
    for d in decisions {
        if let Status::Resolved(t) = &d.status {
            out.push_str(&format!("{}\t{t}\n", d.input.code));
        }
    }
    out
}

/// Withheld codes for manual curation, in source order.
pub fn review_queue_tsv(decisions: &[ChainDecision]) -> String {
    let mut withheld: Vec<&ChainDecision> = decisions
        .iter()
        .filter(|d| d.status.is_withheld())
        .collect();
    withheld.sort_by(|a, b| a.input.cmp(&b.input));
    let mut out = format!("{QUEUE_HEADER}\n");
    for d in withheld {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            d.input.code,
            d.stage,
            d.status.candidates().join(",")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: &str, t: &str, exact: bool, mappable: bool) -> GemRow {
        GemRow {
            source: s.into(),
            target: t.into(),
            exact,
            mappable,
        }
    }

    fn input(code: &str, version: Version) -> InputCode {
        InputCode {
            code: code.into(),
            version,
        }
    }

    #[test]
    fn parses_valid_rows_with_normalization() {
        let rows =
            parse_gem("a01\tB02\t1\t1\n# note\n\nA02 \tc3\t0\t1\r\nA03\tC4\t1\t0\n").unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], row("A01", "B02", true, true));
        assert_eq!(rows[1], row("A02", "C3", false, true));
    }

    #[test]
    fn bad_flag_reports_its_line() {
        let err = parse_gem("A\tB\t1\t1\nA\tC\t2\t1\n").unwrap_err();
        assert!(matches!(err, IcdError::Parse { line: 2, .. }), "{err:?}");
        assert!(matches!(
            parse_gem("A\tB\t1\n"),
            Err(IcdError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_gem(" \tB\t1\t1\n"),
            Err(IcdError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn gem_round_trip() {
        let rows = vec![row("A", "B", true, false), row("C", "D", false, true)];
        assert_eq!(parse_gem(&serialize_gem(&rows)).unwrap(), rows);
    }

    #[test]
    fn filter_truth_table() {
        let rows = vec![
            row("A", "1", true, true),
            row("B", "2", true, false),
            row("C", "3", false, true),
            row("D", "4", false, false),
        ];
        assert_eq!(
            filter_exact_mappable(&rows),
            vec![row("A", "1", true, true)]
        );
        assert!(filter_exact_mappable(&[]).is_empty());
    }

    #[test]
    fn one_to_one_rules() {
        let d = enforce_one_to_one(
            &[
                row("A", "B", true, true),
                row("X", "B", true, true),
                row("X", "C", true, true),
                row("A", "B", true, true),
            ],
            Stage::Icd9To10,
        );
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].status, Status::Resolved("B".into()));
        assert_eq!(
            d[1].status,
            Status::WithheldMultiCandidate(vec!["B".into(), "C".into()])
        );
    }

    #[test]
    fn unknown_version_is_an_input_error() {
        assert!(matches!(
            parse_inputs("A\t11\n"),
            Err(IcdError::UnknownVersion { line: 1, .. })
        ));
        assert_eq!(
            parse_inputs("a1\t9\nB2\t10\n").unwrap(),
            vec![input("A1", Version::Icd9), input("B2", Version::Icd10)]
        );
    }

    #[test]
    fn chain_composes_and_stops_early() {
        let s1 = StageTable::new(
            &[
                row("X", "Y", true, true),
                row("W", "Y1", true, true),
                row("W", "Y2", true, true),
            ],
            Stage::Icd9To10,
        );
        let s2 = StageTable::new(
            &[row("Y", "Z", true, true), row("Q", "R", false, true)],
            Stage::Icd10To11,
        );
        let decisions = chain_to_icd11(
            &s1,
            &s2,
            &[
                input("X", Version::Icd9),
                input("W", Version::Icd9),
                input("Q", Version::Icd10),
                input("N", Version::Icd10),
                input("X", Version::Icd9),
            ],
            &DenyList::default(),
        );
        assert_eq!(decisions.len(), 4);
        let by_code = |c: &str| decisions.iter().find(|d| d.input.code == c).unwrap();
        assert_eq!(by_code("X").status, Status::Resolved("Z".into()));
        assert_eq!(by_code("W").stage, Stage::Icd9To10);
        assert!(matches!(
            by_code("W").status,
            Status::WithheldMultiCandidate(_)
        ));
        assert_eq!(
            by_code("Q").status,
            Status::WithheldInexact(vec!["R".into()])
        );
        assert_eq!(by_code("N").status, Status::WithheldNoCandidate);

        let summary = summarize(&decisions);
        assert_eq!(summary.resolved, 1);
        let queue = review_queue_tsv(&decisions);
        assert_eq!(queue, "source\tstage\tcandidates\nN\ticd10_to_11\t\nQ\ticd10_to_11\tR\nW\ticd9_to_10\tY1,Y2\n");
        assert_eq!(resolved_tsv(&decisions), "source\ticd11\nX\tZ\n");
    }

    #[test]
    fn deny_list_excludes_source_or_target() {
        let s1 = StageTable::new(&[row("X", "Y", true, true)], Stage::Icd9To10);
        let s2 = StageTable::new(
            &[row("Y", "Z", true, true), row("V", "U", true, true)],
            Stage::Icd10To11,
        );
        let deny = DenyList::parse("# non-disease\nz\nV\n");
        let d = chain_to_icd11(
            &s1,
            &s2,
            &[input("X", Version::Icd9), input("V", Version::Icd10)],
            &deny,
        );
        assert!(d.iter().all(|d| d.status == Status::ExcludedNonDisease));
        assert_eq!(review_queue_tsv(&d), "source\tstage\tcandidates\n");
    }
}
