//! Report files: `aggregate.csv`, `aggregate.json`, `product_scores.csv` and
//! one `histograms/<preset>_<product>.json` per held-out product.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::holdout::{ExperimentReport, ModelRun, ReportProvenance, SweepRow};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct AggregateFile<'a> {
    table: Vec<SweepRow>,
    provenance: &'a ReportProvenance,
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes every report file under `dir`. Output depends only on the report,
/// so re-emitting the same report rewrites identical bytes.
pub fn emit_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let hist_dir = dir.join("histograms");
    std::fs::create_dir_all(&hist_dir).map_err(|e| Error::io(&hist_dir, e))?;
    let mut written = Vec::new();

    let table = report.table();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "preset",
        "average_mc",
        "weighted_average_mc",
        "baseline_average_mc",
        "baseline_weighted_average_mc",
    ])?;
    for r in &table {
        w.write_record([
            r.preset.to_string(),
            r.average_mc.to_string(),
            r.weighted_average_mc.to_string(),
            opt(r.baseline_average_mc),
            opt(r.baseline_weighted_average_mc),
        ])?;
    }
    let path = dir.join("aggregate.csv");
    write(path.clone(), &w.into_inner().map_err(|e| Error::io(&path, e.into_error()))?)?;
    written.push(path);

    let json = serde_json::to_vec_pretty(&AggregateFile {
        table,
        provenance: &report.provenance,
    })?;
    let path = dir.join("aggregate.json");
    write(path.clone(), &json)?;
    written.push(path);

    let targets: Vec<String> = report
        .presets
        .first()
        .and_then(|p| p.ctvae.products.first())
        .map(|s| s.columns.iter().map(|c| c.column.clone()).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["preset".to_string(), "model".into(), "product".into(), "purchase_count".into(), "mc".into()];
    header.extend(targets.iter().cloned());
    w.write_record(&header)?;
    for p in &report.presets {
        let runs: Vec<(&str, &ModelRun)> = std::iter::once(("ctvae", &p.ctvae))
            .chain(p.baseline.as_ref().map(|b| ("tvae", b)))
            .collect();
        for (name, run) in runs {
            for s in &run.products {
                let mut rec = vec![
                    p.preset.to_string(),
                    name.to_string(),
                    s.product.clone(),
                    s.purchase_count.to_string(),
                    s.mc.to_string(),
                ];
                rec.extend(s.columns.iter().map(|c| c.score.to_string()));
                w.write_record(&rec)?;
            }
        }
    }
    let path = dir.join("product_scores.csv");
    write(path.clone(), &w.into_inner().map_err(|e| Error::io(&path, e.into_error()))?)?;
    written.push(path);

    for h in &report.histograms {
        let path = hist_dir.join(format!("{}_{}.json", h.preset, file_safe(&h.product)));
        write(path.clone(), &serde_json::to_vec_pretty(h)?)?;
        written.push(path);
    }
    Ok(written)
}
