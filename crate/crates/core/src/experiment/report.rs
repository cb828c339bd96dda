use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::GridReport;
use crate::error::{Error, Result};
use crate::eval::Metric;

/// Full report including per-fold timings; enough to regenerate every table.
pub const REPORT_JSON: &str = "report.json";

/// Published reference timings on the original hardware, quoted in the
/// timing table footnote.
const REFERENCE_TIMINGS: &str =
    "Published reference timings on the original hardware: DenseNet121 extraction 9.306 s, Bagging training 30.748 s.";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub paths: Vec<PathBuf>,
    /// sha256 over the metric CSVs, in `Metric::ALL` order.
    pub checksum: String,
}

fn csv_name(m: Metric) -> String {
    format!("report_{}.csv", m.as_str())
}

/// Raw per-fold values for one metric. Contains no timings, so it is
/// byte-identical across reruns with the same inputs and seed.
pub fn metric_csv(r: &GridReport, m: Metric) -> String {
    let mut out = String::from("extractor,classifier,mean,std");
    for f in 0..r.k {
        write!(out, ",fold_{f}").unwrap();
    }
    out.push('\n');
    for c in &r.cells {
        let s = c.summary.get(m);
        write!(out, "{},{},{},{}", c.extractor, c.classifier.as_str(), s.mean, s.std).unwrap();
        for f in &c.summary.per_fold {
            write!(out, ",{}", f.get(m)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn timing_csv(r: &GridReport) -> String {
    let mut out = String::from(
        "extractor,classifier,extraction_total_s,extraction_per_image_s,train_total_s,train_mean_s,train_std_s,predict_total_s\n",
    );
    for c in &r.cells {
        let ex = r
            .extractors
            .iter()
            .find(|e| e.name == c.extractor)
            .and_then(|e| e.extraction.as_ref());
        let (tot, per) = match ex {
            Some(x) => (x.total_s.to_string(), x.per_image_s.to_string()),
            None => (String::new(), String::new()),
        };
        let s = &c.summary;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.extractor,
            c.classifier.as_str(),
            tot,
            per,
            s.total_train_time_s(),
            s.train_time_s.mean,
            s.train_time_s.std,
            s.total_predict_time_s()
        )
        .unwrap();
    }
    out
}

/// Mean and std as percentages with two decimals: `"99.00 ± 0.07"`.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", mean * 100.0, std * 100.0)
}

fn md_header(r: &GridReport, title: &str) -> String {
    let mut out = format!("# {title}\n\n");
    let e = &r.environment;
    writeln!(
        out,
        "{}-fold stratified cross-validation, seed {}. Std is the {} standard deviation over folds.\n",
        r.k, r.seed, e.std_convention
    )
    .unwrap();
    out
}

fn md_footer(r: &GridReport, checksum: &str) -> String {
    let e = &r.environment;
    let mut out = String::from("\nClassifier settings:\n\n");
    for (kind, cfg) in &r.configs {
        let json = serde_json::to_string(cfg).unwrap_or_default();
        writeln!(out, "- {}: `{json}`", kind.display_name()).unwrap();
    }
    writeln!(
        out,
        "\nEnvironment: covifex {}, {}/{}, host {}, {} logical CPUs.\n",
        e.covifex_version, e.os, e.arch, e.host, e.logical_cpus
    )
    .unwrap();
    writeln!(out, "Report checksum (sha256 of the metric CSVs): `{checksum}`").unwrap();
    out
}

fn table_header(r: &GridReport, first: &str) -> String {
    let mut out = format!("| {first} |");
    for k in &r.classifiers {
        write!(out, " {} |", k.display_name()).unwrap();
    }
    out.push_str("\n|---|");
    for _ in &r.classifiers {
        out.push_str("---|");
    }
    out.push('\n');
    out
}

fn metric_md(r: &GridReport, m: Metric, checksum: &str) -> String {
    let ranked = r.ranked(m);
    let best = ranked.first().copied();
    let second = ranked.get(1).copied();
    let mut out = md_header(r, &format!("{} (%, mean ± std)", m.title()));
    out.push_str("Best cell in bold, second best underlined. Equal means rank the faster-training cell first.\n\n");
    out.push_str(&table_header(r, "Extractor"));
    for e in &r.extractors {
        write!(out, "| {} |", e.name).unwrap();
        for &k in &r.classifiers {
            let idx = r
                .cells
                .iter()
                .position(|c| c.extractor == e.name && c.classifier == k);
            let text = match idx {
                Some(i) => {
                    let s = r.cells[i].summary.get(m);
                    let cell = format_cell(s.mean, s.std);
                    if Some(i) == best {
                        format!("**{cell}**")
                    } else if Some(i) == second {
                        format!("<u>{cell}</u>")
                    } else {
                        cell
                    }
                }
                None => "n/a".into(),
            };
            write!(out, " {text} |").unwrap();
        }
        out.push('\n');
    }
    out.push_str(&md_footer(r, checksum));
    out
}

fn timing_md(r: &GridReport, checksum: &str) -> String {
    let mut out = md_header(r, "Timing (seconds)");
    out.push_str(
        "Extraction covers all images of the dataset. Training is summed over the folds.\n\n",
    );
    let mut head = String::from("| Extractor | Extraction | Per image |");
    let mut rule = String::from("|---|---|---|");
    for k in &r.classifiers {
        write!(head, " {} train |", k.display_name()).unwrap();
        rule.push_str("---|");
    }
    writeln!(out, "{head}\n{rule}").unwrap();
    for e in &r.extractors {
        match &e.extraction {
            Some(x) => write!(out, "| {} | {:.3} | {:.4} |", e.name, x.total_s, x.per_image_s).unwrap(),
            None => write!(out, "| {} | n/a | n/a |", e.name).unwrap(),
        }
        for &k in &r.classifiers {
            match r.cell(&e.name, k) {
                Some(c) => write!(out, " {:.3} |", c.summary.total_train_time_s()).unwrap(),
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
    }
    writeln!(out, "\n{REFERENCE_TIMINGS}").unwrap();
    out.push_str(&md_footer(r, checksum));
    out
}

fn checksum_of(csvs: &[String]) -> String {
    let mut h = Sha256::new();
    for c in csvs {
        h.update(c.as_bytes());
    }
    hex::encode(h.finalize())
}

fn write(dir: &Path, name: &str, text: &str, paths: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    paths.push(p);
    Ok(())
}

/// Writes `report_<metric>.{csv,md}` for every metric, `report_timing.{csv,md}`
/// and `report.json` into `dir`.
pub fn emit_report(r: &GridReport, dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csvs: Vec<String> = Metric::ALL.iter().map(|&m| metric_csv(r, m)).collect();
    let checksum = checksum_of(&csvs);
    let mut paths = Vec::new();
    for (&m, csv) in Metric::ALL.iter().zip(&csvs) {
        write(dir, &csv_name(m), csv, &mut paths)?;
        write(dir, &format!("report_{}.md", m.as_str()), &metric_md(r, m, &checksum), &mut paths)?;
    }
    write(dir, "report_timing.csv", &timing_csv(r), &mut paths)?;
    write(dir, "report_timing.md", &timing_md(r, &checksum), &mut paths)?;
    let json = serde_json::to_string_pretty(r).map_err(|e| Error::invalid(e.to_string()))?;
    write(dir, REPORT_JSON, &json, &mut paths)?;
    Ok(ReportFiles { paths, checksum })
}

/// Recomputes the checksum from the metric CSVs on disk.
pub fn report_checksum(dir: &Path) -> Result<String> {
    let mut csvs = Vec::new();
    for m in Metric::ALL {
        let p = dir.join(csv_name(m));
        csvs.push(fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?);
    }
    Ok(checksum_of(&csvs))
}

pub fn load_report(dir: &Path) -> Result<GridReport> {
    let p = dir.join(REPORT_JSON);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "report",
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::ClassifierKind;
    use crate::experiment::{run_grid, GridConfig, GridInput};
    use crate::synthetic::reference_dataset;

    #[test]
    fn cell_format() {
        assert_eq!(format_cell(0.99, 0.0007), "99.00 ± 0.07");
        assert_eq!(format_cell(1.0, 0.0), "100.00 ± 0.00");
    }

    #[test]
    fn single_cell_report_is_bold() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = GridConfig::new(vec!["Stub".into()], vec![ClassifierKind::DecisionTree], dir.path());
        cfg.k = 2;
        let r = run_grid(&GridInput::from_matrices([reference_dataset(5)]), &cfg).unwrap();
        let files = emit_report(&r, dir.path()).unwrap();
        let md = fs::read_to_string(dir.path().join("report_accuracy.md")).unwrap();
        let table: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).collect();
        assert_eq!(table.len(), 3);
        assert_eq!(table[0], "| Extractor | Decision Tree |");
        assert!(table[2].starts_with("| Stub | **"), "{}", table[2]);
        assert!(!md.contains("<u>"));
        assert!(md.contains(&files.checksum));
        assert_eq!(report_checksum(dir.path()).unwrap(), files.checksum);
        assert_eq!(load_report(dir.path()).unwrap(), r);
        let csv = fs::read_to_string(dir.path().join("report_accuracy.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "extractor,classifier,mean,std,fold_0,fold_1");
    }
}
