//! CSV panel ingestion, scenario spec files and report rendering.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RgivError};
use crate::model::PanelData;
use crate::simulation::{CoverageStat, DgpSpec, ReplicationRecord, RejectionStat, ScenarioReport, SCHEMA_VERSION};

/// A panel together with the unit identifiers from the outcomes header.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPanel {
    pub units: Vec<String>,
    pub panel: PanelData,
}

/// Reads an outcomes CSV (header of unit ids, one row per period) and a
/// sizes CSV (`unit,size` rows, optional header). Sizes are reordered to the
/// outcomes header. With `normalize_sizes` the sizes are rescaled to sum to
/// one (with a warning) instead of being rejected.
pub fn read_panel<R1: Read, R2: Read>(outcomes: R1, sizes: R2, normalize_sizes: bool) -> Result<LabeledPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(outcomes);
    let units: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .zip(&units)
            .map(|(cell, unit)| {
                cell.parse::<f64>().map_err(|_| RgivError::Parse {
                    row: row + 1,
                    column: unit.clone(),
                    message: format!("'{cell}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }

    let mut size_rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(sizes);
    let mut by_unit: HashMap<String, f64> = HashMap::new();
    for (row, rec) in size_rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(RgivError::Parse {
                row: row + 1,
                column: "sizes".into(),
                message: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        match rec[1].parse::<f64>() {
            Ok(v) => {
                by_unit.insert(rec[0].to_string(), v);
            }
            Err(_) if row == 0 => {} // header
            Err(_) => {
                return Err(RgivError::Parse {
                    row: row + 1,
                    column: "size".into(),
                    message: format!("'{}' is not a number", &rec[1]),
                })
            }
        }
    }
    let mut sizes = units
        .iter()
        .map(|u| {
            by_unit
                .get(u)
                .copied()
                .ok_or_else(|| RgivError::InvalidPanel(format!("unit '{u}' missing from sizes file")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if normalize_sizes {
        let total: f64 = sizes.iter().sum();
        if (total - 1.0).abs() > crate::model::SIZE_SUM_TOL {
            log::warn!("sizes sum to {total}; renormalizing");
            sizes.iter_mut().for_each(|s| *s /= total);
        }
    }
    let panel = PanelData::from_rows(&rows, sizes)?;
    Ok(LabeledPanel { units, panel })
}

pub fn load_panel(csv_path: &Path, sizes_path: &Path, normalize_sizes: bool) -> Result<LabeledPanel> {
    let outcomes = std::fs::File::open(csv_path)?;
    let sizes = std::fs::File::open(sizes_path)?;
    read_panel(outcomes, sizes, normalize_sizes)
}

/// Writes outcomes and sizes in the format [`load_panel`] reads. Values use
/// shortest round-trip formatting.
pub fn write_panel(panel: &LabeledPanel, csv_path: &Path, sizes_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(&panel.units)?;
    let p = &panel.panel;
    for t in 0..p.periods() {
        w.write_record((0..p.units()).map(|i| format!("{:?}", p.outcomes()[(t, i)])))?;
    }
    w.flush()?;
    let mut s = csv::Writer::from_path(sizes_path)?;
    s.write_record(["unit", "size"])?;
    for (u, v) in panel.units.iter().zip(p.sizes()) {
        s.write_record([u.clone(), format!("{v:?}")])?;
    }
    s.flush()?;
    Ok(())
}

/// Parses a TOML scenario spec. Keys mirror [`DgpSpec`]:
///
/// ```toml
/// name = "my-scenario"
/// periods = 2300
/// phi = [0.33, 0.33, 0.33]
/// sigma = [0.015, 0.015, 0.015]
/// seed = 7
/// [size_rule]
/// kind = "power_law"   # or kind = "explicit", sizes = [...]
/// zeta = 1.04
/// [shock_dist]
/// kind = "gaussian"    # or kind = "student_t", dof = 8.0
/// ```
pub fn parse_spec(text: &str) -> Result<DgpSpec> {
    let spec: DgpSpec = toml::from_str(text).map_err(|e| RgivError::Serde(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_spec(path: &Path) -> Result<DgpSpec> {
    parse_spec(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Records,
}

pub fn render_report(report: &ScenarioReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Table => render_tables(std::slice::from_ref(report)).into_bytes(),
        ReportFormat::Records => render_records(report),
    }
}

fn cov(c: &Option<CoverageStat>) -> (String, String) {
    match c {
        Some(c) => (format!("{:.3}", c.rate), format!("({:.3})", c.median_length)),
        None => ("-".into(), String::new()),
    }
}

fn rej(r: &Option<RejectionStat>) -> String {
    r.map(|r| format!("{:.3}", r.rate)).unwrap_or_else(|| "-".into())
}

/// Human-readable summary: coverage over median interval length (in
/// parentheses) for the aggregate RGIV estimands and the GIV baselines,
/// rejection rates of the two tests, then per-coefficient coverage.
pub fn render_tables(reports: &[ScenarioReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(
            out,
            "# {} | reps {} | seed {} | version {} | config {} | failures {} | {:.1}s",
            r.spec.name,
            r.reps,
            r.provenance.seed,
            r.provenance.version,
            &r.provenance.config_hash[..16.min(r.provenance.config_hash.len())],
            r.failures,
            r.elapsed_secs
        );
    }
    let _ = writeln!(
        out,
        "{:<20}|{:^19}|{:^19}|{:^15}",
        "", "RGIV", "GIV", "Testing"
    );
    let _ = writeln!(
        out,
        "{:<20}|{:>9}{:>9} |{:>9}{:>9} |{:>7}{:>8}",
        "", "phi_S", "phi_E", "Feasible", "Oracle", "Spec.", "Homog."
    );
    let _ = writeln!(out, "{}", "-".repeat(76));
    for r in reports {
        let s = &r.summary;
        let (a, al) = cov(&s.rgiv_phi_s);
        let (b, bl) = cov(&s.rgiv_phi_e);
        let (c, cl) = cov(&s.giv_feasible);
        let (d, dl) = cov(&s.giv_oracle);
        let _ = writeln!(
            out,
            "{:<20}|{:>9}{:>9} |{:>9}{:>9} |{:>7}{:>8}",
            r.spec.name,
            a,
            b,
            c,
            d,
            rej(&s.j_test),
            rej(&s.homogeneity)
        );
        let _ = writeln!(out, "{:<20}|{:>9}{:>9} |{:>9}{:>9} |{:>7}{:>8}", "", al, bl, cl, dl, "", "");
    }
    let _ = writeln!(out);
    for r in reports {
        if r.summary.coefficients.is_empty() {
            continue;
        }
        let _ = write!(out, "{:<20}|", r.spec.name);
        for k in 0..r.summary.coefficients.len() {
            let _ = write!(out, "{:>8}", format!("phi_{}", k + 1));
        }
        let _ = writeln!(out);
        let _ = write!(out, "{:<20}|", "");
        for c in &r.summary.coefficients {
            let _ = write!(out, "{:>8.3}", c.rate);
        }
        let _ = writeln!(out);
        let _ = write!(out, "{:<20}|", "");
        for c in &r.summary.coefficients {
            let _ = write!(out, "{:>8}", format!("({:.3})", c.median_length));
        }
        let _ = writeln!(out);
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RecordLine {
    Header {
        schema_version: u32,
        report: Box<ScenarioReport>,
    },
    Replication {
        schema_version: u32,
        #[serde(flatten)]
        record: Box<ReplicationRecord>,
    },
}

/// Line-delimited JSON: a header line with provenance, spec, options and
/// summary, then one line per replication. Byte-identical for identical
/// inputs (wall-clock time is not included).
pub fn render_records(report: &ScenarioReport) -> Vec<u8> {
    let mut out = Vec::new();
    let header = RecordLine::Header {
        schema_version: SCHEMA_VERSION,
        report: Box::new(report.clone()),
    };
    out.extend(serde_json::to_vec(&header).expect("report serializes"));
    out.push(b'\n');
    for rec in &report.records {
        let line = RecordLine::Replication {
            schema_version: SCHEMA_VERSION,
            record: Box::new(rec.clone()),
        };
        out.extend(serde_json::to_vec(&line).expect("record serializes"));
        out.push(b'\n');
    }
    out
}

/// Inverse of [`render_records`].
pub fn parse_records(bytes: &[u8]) -> Result<ScenarioReport> {
    let text = std::str::from_utf8(bytes).map_err(|e| RgivError::Serde(e.to_string()))?;
    let mut report: Option<ScenarioReport> = None;
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: RecordLine = serde_json::from_str(line).map_err(|e| RgivError::Parse {
            row: k + 1,
            column: "record".into(),
            message: e.to_string(),
        })?;
        match parsed {
            RecordLine::Header { schema_version, report: r } => {
                if schema_version != SCHEMA_VERSION {
                    return Err(RgivError::Serde(format!("unsupported schema version {schema_version}")));
                }
                report = Some(*r);
            }
            RecordLine::Replication { record, .. } => match report.as_mut() {
                Some(r) => r.records.push(*record),
                None => return Err(RgivError::Serde("replication line before header".into())),
            },
        }
    }
    report.ok_or_else(|| RgivError::Serde("missing header line".into()))
}
