use std::fmt::Write as _;
use std::path::Path;

use super::stages::{GeneralSummary, GENERAL_SUMMARY, INLP_SUMMARY, SELECTION};
use super::RUN_MANIFEST;
use crate::error::{Error, Result};
use crate::fsutil::read_json;
use crate::probe::ProbeSelection;
use crate::pwcca::Dendrogram;

pub const REPORT_FILE: &str = "report.md";

fn csv_table(path: &Path) -> Result<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| crate::fsutil::csv_err(path, e))?;
    let mut out = String::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| crate::fsutil::csv_err(path, e))?;
        let cells: Vec<&str> = rec.iter().collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let _ = writeln!(out, "|{}", "---|".repeat(cells.len()));
        }
    }
    Ok(Some(out))
}

/// Markdown summary of a run directory, built only from files on disk so a
/// cached rerun reports the same thing.
pub fn render_report(run_dir: &Path) -> Result<String> {
    let manifest_path = run_dir.join(RUN_MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path));
    }
    let manifest: serde_json::Value = read_json(&manifest_path, "run manifest")?;
    let mut s = String::from("# Run report\n\n");
    let _ = writeln!(s, "dataset sha256: `{}`\n", manifest["dataset"]["sha256"].as_str().unwrap_or("?"));
    if let Some(stages) = manifest["stages"].as_array() {
        s.push_str("## Stages\n\n| stage | key | outputs |\n|---|---|---|\n");
        for st in stages {
            let _ = writeln!(
                s,
                "| {} | `{}` | {} |",
                st["stage"].as_str().unwrap_or("?"),
                &st["key"].as_str().unwrap_or("?")[..12.min(st["key"].as_str().unwrap_or("?").len())],
                st["outputs"].as_object().map_or(0, |o| o.len())
            );
        }
        s.push('\n');
    }

    let sel_path = run_dir.join(SELECTION);
    if sel_path.exists() {
        let sels: Vec<ProbeSelection> = read_json(&sel_path, "probe selection")?;
        s.push_str("## Selected probes\n\n| task | best linear | val | best nonlinear | val |\n|---|---|---|---|---|\n");
        for sel in &sels {
            let acc = |id: &crate::probe::ProbeId, cands: &[crate::probe::SelectionCandidate]| {
                cands
                    .iter()
                    .find(|c| c.key == id.key && c.family == id.family)
                    .map_or("?".to_string(), |c| format!("{:.4}", c.mean_val_accuracy))
            };
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                sel.task,
                sel.best_linear,
                acc(&sel.best_linear, &sel.linear_candidates),
                sel.best_nonlinear,
                acc(&sel.best_nonlinear, &sel.nonlinear_candidates)
            );
        }
        s.push('\n');
    }
    let gen_path = run_dir.join(GENERAL_SUMMARY);
    if gen_path.exists() {
        let g: GeneralSummary = read_json(&gen_path, "general probe summary")?;
        let _ = writeln!(s, "## General probe\n\n{} ({} training rows per task)\n", g.id, g.rows_per_task);
        for (t, e) in &g.per_task {
            let _ = writeln!(s, "- {t}: {:.4} (n = {})", e.accuracy, e.n);
        }
        s.push('\n');
    }
    let sections = [
        ("INLP", INLP_SUMMARY),
        ("Transfer accuracy", "matrices/transfer.csv"),
        ("Normalized accuracy drop", "matrices/ablation.csv"),
        ("PWCCA distance", "pwcca/distances.csv"),
    ];
    for (title, rel) in sections {
        if let Some(t) = csv_table(&run_dir.join(rel))? {
            let _ = writeln!(s, "## {title}\n\n{t}");
        }
    }
    let dendro = run_dir.join("pwcca/dendrogram.json");
    if dendro.exists() {
        let d = Dendrogram::read_json(&dendro)?;
        s.push_str("## Ward merges\n\n");
        for m in &d.merges {
            let name = |id: usize| {
                if id < d.labels.len() {
                    d.labels[id].clone()
                } else {
                    format!("#{}", id - d.labels.len())
                }
            };
            let _ = writeln!(s, "- {} + {} at {:.4}", name(m.a), name(m.b), m.height);
        }
        s.push('\n');
    }
    Ok(s)
}
