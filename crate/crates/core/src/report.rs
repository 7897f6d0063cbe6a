//! CSV tables and small SVG charts for experiment outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A header plus string rows, written as CSV behind an optional
/// `# config_hash: ...` comment line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row);
    }

    /// Labelled square or rectangular grid: first column holds row labels.
    pub fn grid(corner: &str, rows: &[String], cols: &[String], values: &Array2<f64>) -> Self {
        assert_eq!(values.dim(), (rows.len(), cols.len()));
        let mut t = Table::new(std::iter::once(corner.to_string()).chain(cols.iter().cloned()));
        for (i, r) in rows.iter().enumerate() {
            t.push(std::iter::once(r.clone()).chain(values.row(i).iter().map(|v| fmt_f64(*v))));
        }
        t
    }

    pub fn to_csv(&self, config_hash: Option<&str>) -> Result<String> {
        let mut out = String::new();
        if let Some(h) = config_hash {
            writeln!(out, "# config_hash: {h}").expect("string write");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {}", e.error())))?;
        out.push_str(std::str::from_utf8(&bytes).expect("csv of utf-8 fields"));
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        fs::write(path, self.to_csv(config_hash)?).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Parse CSV written by [`Table::to_csv`], skipping `# ` comment lines.
    pub fn from_csv(text: &str) -> Result<Self> {
        let body: String = text
            .lines()
            .filter(|l| !l.starts_with("# "))
            .map(|l| format!("{l}\n"))
            .collect();
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    /// Fixed-width text rendering, right-aligned except the first column.
    pub fn to_text(&self) -> String {
        let n = self.header.len();
        let mut widths = vec![0; n];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        for r in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Shortest decimal that round-trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn color(t: f64) -> String {
    // white → dark red
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let g = (255.0 * (1.0 - t)).round() as u8;
    let r = (255.0 - 100.0 * t).round() as u8;
    format!("#{r:02x}{g:02x}{g:02x}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap of `values` with rows top to bottom; colour scaled per row to its
/// maximum so each row's peak is visible regardless of magnitude.
pub fn heatmap_svg(title: &str, rows: &[String], cols: &[String], values: &Array2<f64>) -> String {
    assert_eq!(values.dim(), (rows.len(), cols.len()));
    let cell = 48.0;
    let (left, top) = (70.0, 50.0);
    let w = left + cell * cols.len() as f64 + 20.0;
    let h = top + cell * rows.len() as f64 + 20.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<text x="{left}" y="16" font-size="13">{}</text>"#, escape(title)).unwrap();
    for (j, c) in cols.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, top - 6.0, escape(c)).unwrap();
    }
    for (i, r) in rows.iter().enumerate() {
        let y = top + cell * i as f64;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, y + cell / 2.0 + 4.0, escape(r)).unwrap();
        let max = values.row(i).iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        for j in 0..cols.len() {
            let v = values[[i, j]];
            let t = if max > 0.0 { v / max } else { 0.0 };
            let x = left + cell * j as f64;
            writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}" stroke="#888"/>"##,
                color(t)
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="9">{:.3}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 3.0,
                v
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Line chart of named series of `(x, y)` points.
pub fn line_plot_svg(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (520.0, 320.0);
    let (left, right, top, bottom) = (55.0, 110.0, 30.0, 40.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<text x="{left}" y="18" font-size="13">{}</text>"#, escape(title)).unwrap();
    writeln!(
        s,
        r#"<polyline points="{left},{top} {left},{} {},{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom
    )
    .unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (left + w - right) / 2.0, h - 8.0, escape(x_label)).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, left - 4.0, top + 4.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, left - 4.0, h - bottom).unwrap();
    for (i, (name, p)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let line: Vec<String> = p
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, line.join(" ")).unwrap();
        let ly = top + 14.0 * i as f64;
        writeln!(s, r#"<text x="{}" y="{ly}" fill="{c}">{}</text>"#, w - right + 8.0, escape(name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip_with_hash() {
        let g = Table::grid(
            "lang",
            &["a".into(), "b".into()],
            &["a".into(), "b".into()],
            &array![[1.5, -0.25], [0.1, 3.0]],
        );
        let text = g.to_csv(Some("abc123")).unwrap();
        assert!(text.starts_with("# config_hash: abc123\nlang,a,b\n"));
        let back = Table::from_csv(&text).unwrap();
        assert_eq!(back, g);
        let v: f64 = back.rows[1][1].parse().unwrap();
        assert_eq!(v, 0.1);
    }

    #[test]
    fn text_layout() {
        let mut t = Table::new(["layer", "en", "zh"]);
        t.push(["1", "7", "1234"]);
        assert_eq!(t.to_text(), "layer  en    zh\n1       7  1234\n");
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let s = heatmap_svg("t<", &["a".into()], &["a".into(), "b".into()], &array![[2.0, 1.0]]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<rect").count(), 2);
        assert!(s.contains("t&lt;"));
        let p = line_plot_svg("x", "layer", &[("a".into(), vec![(1.0, 0.5), (2.0, 0.7)])]);
        assert_eq!(p.matches("<polyline").count(), 2);
    }
}
