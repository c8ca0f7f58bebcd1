//! Report and table files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::ablation::on_off;
use super::{AblationTable, ExperimentError, ExperimentReport, SplitKind};
use crate::classifiers::EpochPoint;
use crate::sensor_data::{Label, NUM_CLASSES};

fn write(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::Io(format!("{}: {e}", dir.display())))
}

fn report_json(r: &ExperimentReport) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("report serializes");
    s.push('\n');
    s
}

fn confusion_csv(confusion: &[Vec<u64>]) -> String {
    let mut s = String::from("true");
    for l in Label::all() {
        s.push(',');
        s.push(l.letter());
    }
    s.push('\n');
    for (i, row) in confusion.iter().enumerate().take(NUM_CLASSES) {
        s.push(Label::from_index(i).expect("row below NUM_CLASSES").letter());
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn curves_csv(curves: &[EpochPoint]) -> String {
    let mut s = String::from("epoch,train_acc,dev_acc\n");
    for p in curves {
        let dev = p.dev_acc.map(|d| d.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{dev}", p.epoch, p.train_acc);
    }
    s
}

/// Writes `report.json`, `confusion.csv`, `curves.csv` and, when there are
/// learning curves, `curves.svg` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<(), ExperimentError> {
    create_dir(dir)?;
    write(&dir.join("report.json"), &report_json(report))?;
    write(&dir.join("confusion.csv"), &confusion_csv(&report.confusion))?;
    write(&dir.join("curves.csv"), &curves_csv(&report.curves))?;
    if !report.curves.is_empty() {
        write(&dir.join("curves.svg"), &curves_svg(&report.curves))?;
    }
    Ok(())
}

/// Line plot of train and dev accuracy against epoch.
pub fn curves_svg(curves: &[EpochPoint]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 60.0;
    const R: f64 = 20.0;
    const T: f64 = 20.0;
    const B: f64 = 50.0;
    let max_epoch = curves.iter().map(|p| p.epoch).max().unwrap_or(1).max(1) as f64;
    let x = |e: usize| L + (e as f64 / max_epoch) * (W - L - R);
    let y = |a: f64| T + (1.0 - a.clamp(0.0, 1.0)) * (H - T - B);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{L}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="#ddd"/><text x="{2}" y="{3:.1}" text-anchor="end">{a:.1}</text>"##,
            y(a),
            W - R,
            L - 6.0,
            y(a) + 4.0
        );
    }
    let ticks = 5.min(max_epoch as usize);
    for i in 0..=ticks {
        let e = (max_epoch as usize * i).div_ceil(ticks.max(1));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{e}</text>"#,
            x(e),
            H - B + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{0}" stroke="black"/><line x1="{L}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        H - B,
        W - R
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">accuracy</text>"#,
        (L + W - R) / 2.0,
        H - 10.0,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );
    let line = |pts: Vec<(usize, f64)>, colour: &str| {
        let coords: Vec<String> = pts.iter().map(|&(e, a)| format!("{:.1},{:.1}", x(e), y(a))).collect();
        format!(
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        )
    };
    let _ = writeln!(s, "{}", line(curves.iter().map(|p| (p.epoch, p.train_acc)).collect(), "#1f77b4"));
    let dev: Vec<(usize, f64)> = curves.iter().filter_map(|p| p.dev_acc.map(|d| (p.epoch, d))).collect();
    let has_dev = !dev.is_empty();
    if has_dev {
        let _ = writeln!(s, "{}", line(dev, "#ff7f0e"));
    }
    let lx = W - R - 130.0;
    let _ = writeln!(
        s,
        r##"<line x1="{lx}" y1="{0}" x2="{1}" y2="{0}" stroke="#1f77b4" stroke-width="2"/><text x="{2}" y="{3}">train</text>"##,
        H - B - 40.0,
        lx + 20.0,
        lx + 26.0,
        H - B - 36.0
    );
    if has_dev {
        let _ = writeln!(
            s,
            r##"<line x1="{lx}" y1="{0}" x2="{1}" y2="{0}" stroke="#ff7f0e" stroke-width="2"/><text x="{2}" y="{3}">validation</text>"##,
            H - B - 22.0,
            lx + 20.0,
            lx + 26.0,
            H - B - 18.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map(|a| format!("{a:.6}")).unwrap_or_default()
}

/// Writes the grid results into `dir`:
///
/// * `ablation.csv`: seed-mean accuracies per configuration,
/// * `overall.csv`: the same numbers in the overall-comparison layout,
/// * `cells.csv`: one line per run, including failures,
/// * `cells/<slug>.json`: the report of every successful run.
pub fn emit_table(table: &AblationTable, dir: &Path) -> Result<(), ExperimentError> {
    create_dir(dir)?;
    let rows = table.rows();
    let mut s = String::from("model,split,aug,ae,train_acc,test_acc\n");
    for r in &rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.model,
            r.split,
            on_off(r.aug),
            on_off(r.ae),
            fmt_acc(r.train_acc),
            fmt_acc(r.test_acc)
        );
    }
    write(&dir.join("ablation.csv"), &s)?;

    let mut s = String::from("model,random_train,random_test,subject_train,subject_test\n");
    for (name, model, aug, ae) in table.overall_rows() {
        s.push_str(&name);
        for split in SplitKind::ALL {
            let r = rows
                .iter()
                .find(|r| r.model == model && r.split == split && r.aug == aug && r.ae == ae);
            let _ = write!(
                s,
                ",{},{}",
                fmt_acc(r.and_then(|r| r.train_acc)),
                fmt_acc(r.and_then(|r| r.test_acc))
            );
        }
        s.push('\n');
    }
    write(&dir.join("overall.csv"), &s)?;

    let cells_dir = dir.join("cells");
    create_dir(&cells_dir)?;
    let mut s = String::from("model,split,aug,ae,seed,train_acc,dev_acc,test_acc,error\n");
    for c in &table.cells {
        let _ = write!(s, "{},{},{},{},{},", c.model, c.split, on_off(c.aug), on_off(c.ae), c.seed);
        match &c.outcome {
            Ok(r) => {
                let a = r.accuracies;
                let _ = writeln!(s, "{:.6},{:.6},{:.6},", a.train, a.dev, a.test);
                write(&cells_dir.join(format!("{}.json", c.slug())), &report_json(r))?;
            }
            Err(e) => {
                let _ = writeln!(s, ",,,\"{}\"", e.replace('"', "'"));
            }
        }
    }
    write(&dir.join("cells.csv"), &s)
}
