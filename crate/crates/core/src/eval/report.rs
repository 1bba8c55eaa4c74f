//! Corpus aggregation, method comparison and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use quick_xml::escape::escape;
use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport};

/// Raw figures of one preprocessing method over the same pages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub structural: f64,
    pub textual: f64,
    /// Currency units.
    pub cost: f64,
    pub input_tokens: u64,
}

/// A method result with percent changes relative to the baseline row.
/// Deltas are `None` on the baseline itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    #[serde(flatten)]
    pub result: MethodResult,
    pub structural_delta: Option<f64>,
    pub textual_delta: Option<f64>,
    pub cost_delta: Option<f64>,
    pub input_tokens_delta: Option<f64>,
}

fn pct(value: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (value / baseline - 1.0) * 100.0)
}

pub fn method_comparison(results: &[MethodResult], baseline: usize) -> Result<Vec<MethodRow>, EvalError> {
    let base = results.get(baseline).ok_or(EvalError::NoBaseline(baseline))?;
    Ok(results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d = |v: f64, b: f64| if i == baseline { None } else { pct(v, b) };
            MethodRow {
                structural_delta: d(r.structural, base.structural),
                textual_delta: d(r.textual, base.textual),
                cost_delta: d(r.cost, base.cost),
                input_tokens_delta: d(r.input_tokens as f64, base.input_tokens as f64),
                result: r.clone(),
            }
        })
        .collect())
}

/// Signed percentage, rounded half away from zero: `+15.6%`, `-3%`.
pub fn render_delta(percent: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let mut rounded = (percent * scale).round() / scale;
    if rounded == 0.0 {
        rounded = 0.0;
    }
    format!("{rounded:+.decimals$}%")
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl MethodRow {
    /// Cells as printed in a comparison table: similarities with one-decimal
    /// deltas, cost and tokens with whole-percent deltas.
    pub fn cells(&self) -> [String; 5] {
        let with = |v: String, d: Option<f64>, decimals: usize| match d {
            Some(d) => format!("{v} ({})", render_delta(d, decimals)),
            None => v,
        };
        let r = &self.result;
        [
            r.method.clone(),
            with(format!("{:.3}", r.structural), self.structural_delta, 1),
            with(format!("{:.3}", r.textual), self.textual_delta, 1),
            with(format!("{:.3}", r.cost), self.cost_delta, 0),
            with(thousands(r.input_tokens), self.input_tokens_delta, 0),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub pages: Vec<EvalReport>,
    /// Scored field names, in schema order.
    pub fields: Vec<String>,
    /// Per-field CER for each page, parallel to `pages`.
    pub series: BTreeMap<String, Vec<Option<f64>>>,
    pub mean_cer: BTreeMap<String, f64>,
    pub mean_structural: f64,
    pub mean_textual: f64,
    pub perfect_entries: usize,
    pub total_entries: usize,
    pub perfect_rate: f64,
    pub methods: Vec<MethodRow>,
}

/// Combines page reports; `methods` (may be empty) are compared against the
/// first row.
pub fn aggregate(reports: &[EvalReport], methods: &[MethodResult]) -> Result<CorpusReport, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let order: Vec<&str> = match reports[0].schema {
        crate::entry::SchemaId::NineField => crate::entry::FIELD_NAMES.to_vec(),
        crate::entry::SchemaId::TeiSubset => super::TEI_FIELDS.to_vec(),
    };
    let fields: Vec<String> =
        order.iter().filter(|f| reports.iter().any(|r| r.field_cer.contains_key(**f))).map(|f| f.to_string()).collect();
    let mut series = BTreeMap::new();
    let mut mean_cer = BTreeMap::new();
    for f in &fields {
        let values: Vec<Option<f64>> = reports.iter().map(|r| r.field_cer.get(f).copied()).collect();
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        mean_cer.insert(f.clone(), present.iter().sum::<f64>() / present.len() as f64);
        series.insert(f.clone(), values);
    }
    let n = reports.len() as f64;
    let perfect_entries = reports.iter().map(|r| r.perfect_entries).sum();
    let total_entries: usize = reports.iter().map(|r| r.total_entries).sum();
    Ok(CorpusReport {
        pages: reports.to_vec(),
        fields,
        series,
        mean_cer,
        mean_structural: reports.iter().map(|r| r.structural_similarity).sum::<f64>() / n,
        mean_textual: reports.iter().map(|r| r.textual_similarity).sum::<f64>() / n,
        perfect_entries,
        total_entries,
        perfect_rate: if total_entries == 0 { 1.0 } else { perfect_entries as f64 / total_entries as f64 },
        methods: if methods.is_empty() { Vec::new() } else { method_comparison(methods, 0)? },
    })
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

fn num(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

impl CorpusReport {
    /// One row per page: CER per field, similarities, perfect entries.
    pub fn pages_csv(&self) -> String {
        let mut header = vec!["page_id".to_string()];
        header.extend(self.fields.iter().map(|f| format!("cer_{f}")));
        header.extend(
            ["structural_similarity", "textual_similarity", "perfect_entries", "total_entries"].map(String::from),
        );
        let mut rows = vec![header];
        for (i, p) in self.pages.iter().enumerate() {
            let mut row = vec![p.page_id.clone()];
            row.extend(self.fields.iter().map(|f| num(self.series[f][i])));
            row.push(num(Some(p.structural_similarity)));
            row.push(num(Some(p.textual_similarity)));
            row.push(p.perfect_entries.to_string());
            row.push(p.total_entries.to_string());
            rows.push(row);
        }
        csv_string(rows)
    }

    pub fn methods_csv(&self) -> String {
        let mut rows = vec![[
            "method",
            "structural",
            "structural_delta",
            "textual",
            "textual_delta",
            "cost",
            "cost_delta",
            "input_tokens",
            "input_tokens_delta",
        ]
        .map(String::from)
        .to_vec()];
        for m in &self.methods {
            let r = &m.result;
            let d = |v: Option<f64>, decimals| v.map(|v| render_delta(v, decimals)).unwrap_or_default();
            rows.push(vec![
                r.method.clone(),
                format!("{:.3}", r.structural),
                d(m.structural_delta, 1),
                format!("{:.3}", r.textual),
                d(m.textual_delta, 1),
                format!("{:.3}", r.cost),
                d(m.cost_delta, 0),
                r.input_tokens.to_string(),
                d(m.input_tokens_delta, 0),
            ]);
        }
        csv_string(rows)
    }

    /// Self-contained HTML page with a CER-by-page line chart.
    pub fn to_html(&self, title: &str) -> String {
        let mut h = String::new();
        let _ = write!(
            h,
            "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{t}</title>\n\
             <style>body{{font-family:sans-serif;margin:2em}}table{{border-collapse:collapse}}\
             td,th{{border:1px solid #bbb;padding:2px 8px;text-align:right}}th:first-child,td:first-child{{text-align:left}}</style>\n\
             </head>\n<body>\n<h1>{t}</h1>\n",
            t = escape(title)
        );
        let _ = writeln!(
            h,
            "<p>{} pages, {} of {} entries perfect ({:.1}%), mean structural similarity {:.3}, mean textual similarity {:.3}</p>",
            self.pages.len(),
            self.perfect_entries,
            self.total_entries,
            self.perfect_rate * 100.0,
            self.mean_structural,
            self.mean_textual
        );
        h.push_str("<h2>Character error rate by page</h2>\n");
        h.push_str(&self.cer_chart_svg());
        h.push_str("\n<h2>Pages</h2>\n<table>\n<tr><th>page</th>");
        for f in &self.fields {
            let _ = write!(h, "<th>{}</th>", escape(f.as_str()));
        }
        h.push_str("<th>structural</th><th>textual</th><th>perfect</th></tr>\n");
        for (i, p) in self.pages.iter().enumerate() {
            let _ = write!(h, "<tr><td>{}</td>", escape(p.page_id.as_str()));
            for f in &self.fields {
                let _ = write!(
                    h,
                    "<td>{}</td>",
                    self.series[f][i].map(|v| format!("{:.1}%", v * 100.0)).unwrap_or_default()
                );
            }
            let _ = writeln!(
                h,
                "<td>{:.3}</td><td>{:.3}</td><td>{}/{}</td></tr>",
                p.structural_similarity, p.textual_similarity, p.perfect_entries, p.total_entries
            );
        }
        h.push_str("</table>\n");
        if !self.methods.is_empty() {
            h.push_str("<h2>Method comparison</h2>\n<table>\n<tr><th>method</th><th>structural</th><th>textual</th><th>cost</th><th>input tokens</th></tr>\n");
            for m in &self.methods {
                h.push_str("<tr>");
                for c in m.cells() {
                    let _ = write!(h, "<td>{}</td>", escape(c.as_str()));
                }
                h.push_str("</tr>\n");
            }
            h.push_str("</table>\n");
        }
        h.push_str("</body>\n</html>\n");
        h
    }

    fn cer_chart_svg(&self) -> String {
        const W: f64 = 720.0;
        const H: f64 = 280.0;
        const PAD: f64 = 40.0;
        const COLORS: [&str; 9] =
            ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"];
        let n = self.pages.len();
        let max = self.series.values().flatten().flatten().fold(1.0f64, |m, &v| m.max(v));
        let x = |i: usize| {
            if n <= 1 {
                PAD + (W - 2.0 * PAD) / 2.0
            } else {
                PAD + i as f64 * (W - 2.0 * PAD) / (n - 1) as f64
            }
        };
        let y = |v: f64| H - PAD - v / max * (H - 2.0 * PAD);

        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{}\" viewBox=\"0 0 {W} {}\">",
            H + 20.0 * self.fields.len().div_ceil(3) as f64,
            H + 20.0 * self.fields.len().div_ceil(3) as f64
        );
        let _ = writeln!(
            s,
            "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000\"/>",
            H - PAD,
            W - PAD,
            H - PAD
        );
        let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"#000\"/>", H - PAD);
        for tick in [0.0, max / 2.0, max] {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{:.0}%</text>",
                PAD - 4.0,
                y(tick) + 3.0,
                tick * 100.0
            );
        }
        if y(1.0) > PAD {
            let _ = writeln!(
                s,
                "<line x1=\"{PAD}\" y1=\"{0:.1}\" x2=\"{1}\" y2=\"{0:.1}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
                y(1.0),
                W - PAD
            );
        }
        for (i, p) in self.pages.iter().enumerate() {
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
                x(i),
                H - PAD + 14.0,
                escape(p.page_id.as_str())
            );
        }
        for (k, f) in self.fields.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut run: Vec<String> = Vec::new();
            let flush = |run: &mut Vec<String>, s: &mut String| {
                if !run.is_empty() {
                    let _ = writeln!(
                        s,
                        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                        run.join(" ")
                    );
                    run.clear();
                }
            };
            for (i, v) in self.series[f].iter().enumerate() {
                match v {
                    Some(v) => {
                        run.push(format!("{:.1},{:.1}", x(i), y(*v)));
                        let _ =
                            writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2\" fill=\"{color}\"/>", x(i), y(*v));
                    }
                    None => flush(&mut run, &mut s),
                }
            }
            flush(&mut run, &mut s);
            let (lx, ly) = (PAD + (k % 3) as f64 * 220.0, H + (k / 3) as f64 * 20.0);
            let _ = writeln!(s, "<rect x=\"{lx}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>", ly - 9.0);
            let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\" font-size=\"11\">{}</text>", lx + 14.0, escape(f.as_str()));
        }
        s.push_str("</svg>");
        s
    }

    /// Writes `pages.csv`, `methods.csv` (when there are method rows),
    /// `report.json` and `report.html` into `dir`.
    pub fn write(&self, dir: &Path, title: &str) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = vec![
            (dir.join("pages.csv"), self.pages_csv()),
            (dir.join("report.json"), serde_json::to_string_pretty(self).expect("report serialises")),
            (dir.join("report.html"), self.to_html(title)),
        ];
        if !self.methods.is_empty() {
            files.push((dir.join("methods.csv"), self.methods_csv()));
        }
        let mut out = Vec::new();
        for (path, text) in files {
            crate::fsutil::write_atomic(&path, text.as_bytes())?;
            out.push(path);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entry::SchemaId;

    fn methods() -> Vec<MethodResult> {
        [
            ("whole page", 0.495, 0.507, 0.370, 7184),
            ("two columns", 0.572, 0.687, 0.536, 13988),
            ("segments", 0.647, 0.710, 1.050, 57186),
        ]
        .iter()
        .map(|&(m, s, t, c, i)| MethodResult { method: m.into(), structural: s, textual: t, cost: c, input_tokens: i })
        .collect()
    }

    fn page(id: &str, cer: &[(&str, f64)], perfect: usize, total: usize) -> EvalReport {
        EvalReport {
            page_id: id.into(),
            schema: SchemaId::NineField,
            field_cer: cer.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            structural_similarity: 0.9,
            textual_similarity: 0.8,
            perfect_entries: perfect,
            total_entries: total,
            hypothesis_entries: total,
        }
    }

    #[test]
    fn comparison_cells() {
        let rows = method_comparison(&methods(), 0).unwrap();
        assert_eq!(rows[0].cells(), ["whole page", "0.495", "0.507", "0.370", "7,184"].map(String::from));
        assert_eq!(
            rows[1].cells(),
            ["two columns", "0.572 (+15.6%)", "0.687 (+35.5%)", "0.536 (+45%)", "13,988 (+95%)"].map(String::from)
        );
        assert_eq!(
            rows[2].cells(),
            ["segments", "0.647 (+30.7%)", "0.710 (+40.0%)", "1.050 (+184%)", "57,186 (+696%)"].map(String::from)
        );
    }

    #[test]
    fn delta_rendering() {
        assert_eq!(render_delta(-0.01, 1), "+0.0%");
        assert_eq!(render_delta(-12.34, 0), "-12%");
        assert_eq!(render_delta(0.05, 1), "+0.1%");
    }

    #[test]
    fn aggregate_series_and_means() {
        let reports = vec![
            page("p1", &[("headword_et", 0.42), ("equivalent_de", 0.1)], 3, 10),
            page("p2", &[("headword_et", 1.3)], 5, 10),
        ];
        let c = aggregate(&reports, &[]).unwrap();
        assert_eq!(c.fields, vec!["headword_et", "equivalent_de"]);
        assert_eq!(c.series["equivalent_de"], vec![Some(0.1), None]);
        assert!((c.mean_cer["headword_et"] - 0.86).abs() < 1e-12);
        assert_eq!(c.perfect_rate, 0.4);
        assert!(c.to_html("t").contains("<svg"));
        assert!(c.pages_csv().starts_with("page_id,cer_headword_et,cer_equivalent_de,"));
        assert!(matches!(aggregate(&[], &[]), Err(EvalError::NoReports)));
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = aggregate(&[page("p1", &[("headword_et", 0.2)], 1, 2)], &methods()).unwrap();
        let files = c.write(dir.path(), "run").unwrap();
        assert_eq!(files.len(), 4);
        let methods = std::fs::read_to_string(dir.path().join("methods.csv")).unwrap();
        assert!(methods.contains("two columns,0.572,+15.6%,0.687,+35.5%,0.536,+45%,13988,+95%\r\n"));
    }
}
