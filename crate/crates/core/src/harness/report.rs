use std::fs;
use std::path::{Path, PathBuf};

use super::run::{ExperimentRecord, Variant};
use crate::error::{Error, Result};
use crate::surgery::Preset;

const FAMILIES: [&str; 4] = ["finetune", "ablation", "addition", "probe"];

/// Every `experiment.json` below `root`, ordered by family, then preset, then row name.
pub fn collect_records(root: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut paths = Vec::new();
    find(root, &mut paths)?;
    let mut records = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<ExperimentRecord>>>()?;
    records.sort_by_key(|r| {
        let fam = FAMILIES.iter().position(|f| *f == r.family).unwrap_or(FAMILIES.len());
        let preset = r.row.parse::<Preset>().ok().map_or(usize::MAX, |p| Preset::ALL.iter().position(|q| *q == p).unwrap_or(usize::MAX));
        (fam, preset, r.row.clone())
    });
    Ok(records)
}

fn find(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "experiment.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// `family,row,variant,fold,accuracy,lambda,degenerate`; diverged folds have an empty accuracy.
pub fn render_csv(records: &[ExperimentRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["family", "row", "variant", "fold", "accuracy", "lambda", "degenerate"]).map_err(e)?;
    for r in records {
        for variant in [Variant::Single, Variant::Oversampled] {
            if r.summary(variant).is_none() {
                continue;
            }
            for (f, ev) in r.evaluations(variant).into_iter().enumerate() {
                let acc = ev.map_or(String::new(), |e| e.accuracy.to_string());
                let deg = ev.map_or(String::new(), |e| e.degenerate.to_string());
                w.write_record([&r.family, &r.row, variant.name(), &f.to_string(), &acc, "", &deg]).map_err(e)?;
            }
        }
        if let Some(p) = &r.probe {
            for row in &p.rows {
                let variant = format!("{}:{}", row.endpoint, row.kind);
                for (f, (a, l)) in row.fold_accuracies.iter().zip(&row.lambdas).enumerate() {
                    w.write_record([&r.family, &r.row, &variant, &f.to_string(), &a.to_string(), &l.to_string(), ""])
                        .map_err(e)?;
                }
            }
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?).map_err(|e| Error::Data(e.to_string()))
}

fn cell(r: &ExperimentRecord, variant: Variant) -> String {
    let Some(s) = r.summary(variant) else {
        return "n/a".into();
    };
    let mut text = match &s.summary {
        Some(sum) => sum.to_string(),
        None => match s.fold_accuracies.iter().flatten().next() {
            Some(a) => format!("{a:.3}"),
            None => "diverged".into(),
        },
    };
    if s.fold_accuracies.iter().any(Option::is_none) {
        let present = s.fold_accuracies.iter().flatten().count();
        text.push_str(&format!(" ({present}/{} folds)†", s.fold_accuracies.len()));
    }
    if s.degenerate {
        text.push('*');
    }
    text
}

/// One table per family plus footnotes.
pub fn render_markdown(records: &[ExperimentRecord]) -> String {
    let mut out = String::from("# Results\n");
    let mut notes: Vec<String> = Vec::new();
    let (mut any_gap, mut any_degenerate) = (false, false);
    for fam in FAMILIES {
        let rows: Vec<&ExperimentRecord> = records.iter().filter(|r| r.family == fam).collect();
        if rows.is_empty() {
            continue;
        }
        out.push_str(&format!("\n## {fam}\n\n"));
        if fam == "probe" {
            for r in rows {
                if let Some(p) = &r.probe {
                    out.push_str(&format!("### {}\n\n{}\n", r.row, p.to_markdown()));
                }
                notes.extend(r.assumptions.iter().cloned());
            }
            continue;
        }
        out.push_str("| Model | Without oversampling | With oversampling |\n|---|---|---|\n");
        for r in rows {
            any_gap |= r.any_diverged();
            any_degenerate |= [Variant::Single, Variant::Oversampled]
                .iter()
                .any(|&v| r.summary(v).is_some_and(|s| s.degenerate));
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                r.row,
                cell(r, Variant::Single),
                cell(r, Variant::Oversampled)
            ));
            notes.extend(r.assumptions.iter().cloned());
        }
    }
    if any_gap {
        notes.push("† Some folds diverged and are excluded from the mean.".into());
    }
    if any_degenerate {
        notes.push("* At least one fold predicted a single class for every held-out image.".into());
    }
    let mut seen = Vec::new();
    for n in notes {
        if !seen.contains(&n) {
            seen.push(n);
        }
    }
    if !seen.is_empty() {
        out.push_str("\n## Notes\n\n");
        for n in seen {
            out.push_str(&format!("- {n}\n"));
        }
    }
    out
}

/// Writes `report.csv` and `report.md` into `root` from the records found there.
pub fn write_report(root: &Path) -> Result<(PathBuf, PathBuf)> {
    let records = collect_records(root)?;
    if records.is_empty() {
        return Err(Error::Data(format!("no experiment.json found under {}", root.display())));
    }
    let csv_path = root.join("report.csv");
    let md_path = root.join("report.md");
    fs::write(&csv_path, render_csv(&records)?).map_err(|e| Error::io(&csv_path, e))?;
    fs::write(&md_path, render_markdown(&records)).map_err(|e| Error::io(&md_path, e))?;
    Ok((csv_path, md_path))
}
