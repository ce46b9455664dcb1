use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ConfusionMatrix, EvalReport, Result, TTest};
use crate::training::METRICS_HEADER;

const CELL: usize = 40;
const MARGIN: usize = 60;

/// Gray level of a cell: 255 (white) for zero, 0 (black) for `max`.
pub fn shade(count: usize, max: usize) -> u8 {
    if max == 0 {
        return 255;
    }
    (255 - (count * 255 + max / 2) / max) as u8
}

/// A self-contained SVG heatmap: one square per cell, darker for larger counts.
pub fn heatmap_svg(m: &ConfusionMatrix, title: &str) -> String {
    let c = m.classes();
    let size = MARGIN + c * CELL + 10;
    let max = m.counts.iter().flatten().copied().max().unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<text x="4" y="14" font-size="11">true \ predicted</text>"#);
    for (i, name) in m.names.iter().enumerate() {
        let mid = MARGIN + i * CELL + CELL / 2;
        let _ = writeln!(s, r#"<text x="{mid}" y="{}" font-size="11" text-anchor="middle">{}</text>"#, MARGIN - 6, escape(name));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#, MARGIN - 6, mid + 4, escape(name));
    }
    for (i, row) in m.counts.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            let g = shade(n, max);
            let (x, y) = (MARGIN + j * CELL, MARGIN + i * CELL);
            let _ = writeln!(
                s,
                r##"<rect class="cell" data-row="{i}" data-col="{j}" data-count="{n}" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})" stroke="#888"/>"##
            );
            let ink = if g < 128 { "#fff" } else { "#000" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" fill="{ink}">{n}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn ttest_cells(t: &TTest) -> String {
    match *t {
        TTest::Value { t, df, p, mean_diff } => format!("{t},{df},{p},{mean_diff},false"),
        TTest::Degenerate { mean_diff } => format!(",,,{mean_diff},true"),
    }
}

/// Writes `metrics.csv`, `ttests.csv`, `curves.csv` and, per variant, seed and
/// language, a confusion-matrix CSV with its SVG heatmap. Returns the paths
/// written, in order.
pub fn report(r: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };

    let mut metrics = String::from("variant,seed,accuracy,precision,recall,f1,log_loss,consistency_kl\n");
    for v in &r.variants {
        for s in &v.seeds {
            let m = s.metrics;
            let _ = writeln!(
                metrics,
                "{},{},{},{},{},{},{},{}",
                v.spec.name, s.seed, m.accuracy, m.precision, m.recall, m.f1, m.log_loss, s.consistency_kl
            );
        }
        let m = v.mean;
        let _ = writeln!(
            metrics,
            "{},mean,{},{},{},{},{},{}",
            v.spec.name, m.accuracy, m.precision, m.recall, m.f1, m.log_loss, v.mean_kl
        );
    }
    put("metrics.csv".into(), metrics)?;

    let mut tt = String::from("a,b,t,df,p,mean_diff,degenerate\n");
    for (a, b, t) in &r.ttests {
        let _ = writeln!(tt, "{a},{b},{}", ttest_cells(t));
    }
    put("ttests.csv".into(), tt)?;

    let mut curves = format!("variant,seed,{METRICS_HEADER}\n");
    for v in &r.variants {
        for s in &v.seeds {
            for line in s.log.to_csv().lines().skip(1) {
                let _ = writeln!(curves, "{},{},{line}", v.spec.name, s.seed);
            }
        }
    }
    put("curves.csv".into(), curves)?;

    for v in &r.variants {
        for s in &v.seeds {
            for (lang, m) in &s.matrices {
                let stem = format!("confusion-{}-seed{}-{}", v.spec.name, s.seed, lang.code());
                put(format!("{stem}.csv"), m.to_csv())?;
                put(format!("{stem}.svg"), heatmap_svg(m, &format!("{} seed {} {}", v.spec.name, s.seed, lang.name())))?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> ConfusionMatrix {
        ConfusionMatrix {
            names: vec!["a".into(), "b".into(), "c".into()],
            counts: vec![vec![9, 1, 0], vec![2, 7, 1], vec![0, 3, 5]],
        }
    }

    #[test]
    fn shading_is_monotone_in_count() {
        let m = fixture();
        let svg = heatmap_svg(&m, "t");
        let mut cells: Vec<(usize, u8)> = svg
            .lines()
            .filter(|l| l.starts_with("<rect"))
            .map(|l| {
                let count = l.split("data-count=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap();
                let g = l.split("rgb(").nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
                (count, g)
            })
            .collect();
        assert_eq!(cells.len(), 9);
        cells.sort();
        for w in cells.windows(2) {
            assert!(w[0].1 >= w[1].1, "{w:?}");
            if w[0].0 < w[1].0 {
                assert!(w[0].1 > w[1].1, "{w:?}");
            }
        }
        assert_eq!((shade(0, 9), shade(9, 9)), (255, 0));
    }

    #[test]
    fn svg_is_self_contained() {
        let svg = heatmap_svg(&fixture(), "x < y");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("href"));
        assert!(svg.contains("x &lt; y"));
    }
}
