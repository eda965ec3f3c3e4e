//! Run-log files: the canonical per-seed CSV (byte-stable across reruns),
//! the cross-seed aggregate CSV, and convenience SVG charts rendered without
//! plotting dependencies.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use demoteach_core::analysis::MetricsRow;

/// Fixed palette for chart series.
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt_f64(cell: &str, what: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .with_context(|| format!("parsing {what} from {cell:?}"))
}

/// Column names for a run over the given task ids.
pub fn csv_header(task_ids: &[String]) -> Vec<String> {
    let mut header = vec!["t".to_owned(), "lambda_dist".to_owned(), "nu_gap_all".to_owned()];
    header.extend(task_ids.iter().map(|id| format!("nu_gap_task_{id}")));
    header.extend(
        ["tv_dist", "sel_state", "sel_task", "objective", "probed"]
            .iter()
            .map(|s| s.to_string()),
    );
    header
}

/// Renders rows as CSV text. Numbers use the shortest representation that
/// parses back to the same value, so identical rows always produce identical
/// bytes.
pub fn rows_to_csv_string(task_ids: &[String], rows: &[MetricsRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(csv_header(task_ids))?;
    for row in rows {
        let mut record = vec![
            row.t.to_string(),
            fmt_opt_f64(row.lambda_dist),
            row.nu_gap_all.to_string(),
        ];
        for id in task_ids {
            record.push(fmt_opt_f64(row.nu_gap_by_task.get(id).copied()));
        }
        record.push(row.tv_dist.to_string());
        record.push(row.sel_state.map(|s| s.to_string()).unwrap_or_default());
        record.push(row.sel_task.clone().unwrap_or_default());
        record.push(fmt_opt_f64(row.objective));
        record.push(if row.probed { "1" } else { "0" }.to_owned());
        writer.write_record(&record)?;
    }
    let bytes = writer.into_inner().context("flushing csv")?;
    Ok(String::from_utf8(bytes).context("csv is utf-8")?)
}

pub fn write_rows(path: impl AsRef<Path>, task_ids: &[String], rows: &[MetricsRow]) -> Result<()> {
    let text = rows_to_csv_string(task_ids, rows)?;
    std::fs::write(path.as_ref(), text)
        .with_context(|| format!("writing {}", path.as_ref().display()))?;
    Ok(())
}

/// Reads a per-seed CSV back into rows, returning the task ids recovered
/// from the header. Exact inverse of [`write_rows`].
pub fn read_rows(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<MetricsRow>)> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let task_ids: Vec<String> = header
        .iter()
        .filter_map(|h| h.strip_prefix("nu_gap_task_").map(str::to_owned))
        .collect();
    let expected = csv_header(&task_ids);
    if header != expected {
        bail!(
            "unexpected columns in {}: {header:?} (expected {expected:?})",
            path.display()
        );
    }
    let n_tasks = task_ids.len();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != expected.len() {
            bail!("row with {} cells, expected {}", record.len(), expected.len());
        }
        let mut nu_gap_by_task = BTreeMap::new();
        for (i, id) in task_ids.iter().enumerate() {
            if let Some(v) = parse_opt_f64(&record[3 + i], "task gap")? {
                nu_gap_by_task.insert(id.clone(), v);
            }
        }
        let base = 3 + n_tasks;
        rows.push(MetricsRow {
            t: record[0].parse().context("parsing t")?,
            lambda_dist: parse_opt_f64(&record[1], "lambda_dist")?,
            nu_gap_all: record[2].parse().context("parsing nu_gap_all")?,
            nu_gap_by_task,
            tv_dist: record[base].parse().context("parsing tv_dist")?,
            sel_state: if record[base + 1].is_empty() {
                None
            } else {
                Some(record[base + 1].parse().context("parsing sel_state")?)
            },
            sel_task: (!record[base + 2].is_empty()).then(|| record[base + 2].to_owned()),
            objective: parse_opt_f64(&record[base + 3], "objective")?,
            probed: match &record[base + 4] {
                "0" => false,
                "1" => true,
                other => bail!("probed cell {other:?} is not 0/1"),
            },
        });
    }
    Ok((task_ids, rows))
}

/// Mean and sample standard deviation (zero for a single value).
fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Cross-seed statistics for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub t: usize,
    /// Present when at least one seed logged a parameter distance.
    pub lambda_dist: Option<(f64, f64)>,
    pub nu_gap_all: (f64, f64),
    /// Keyed by task id; tasks absent from every seed are omitted.
    pub task_gaps: BTreeMap<String, (f64, f64)>,
    pub tv_dist: (f64, f64),
    /// Fraction of seeds whose teacher probed at this step.
    pub probed_frac: f64,
}

/// Aggregates per-seed rows step-by-step. All seeds must cover the same
/// steps in the same order.
pub fn aggregate(seed_rows: &[Vec<MetricsRow>]) -> Result<Vec<AggregateRow>> {
    let Some(first) = seed_rows.first() else {
        bail!("no seed rows to aggregate");
    };
    if seed_rows.iter().any(|rows| rows.len() != first.len()) {
        bail!("seeds logged different numbers of rows");
    }
    let mut out = Vec::with_capacity(first.len());
    for (i, lead) in first.iter().enumerate() {
        let step: Vec<&MetricsRow> = seed_rows.iter().map(|rows| &rows[i]).collect();
        if step.iter().any(|r| r.t != lead.t) {
            bail!("seeds disagree on the step index at row {i}");
        }
        let lambda: Vec<f64> = step.iter().filter_map(|r| r.lambda_dist).collect();
        let mut task_gaps = BTreeMap::new();
        for id in step.iter().flat_map(|r| r.nu_gap_by_task.keys()) {
            if task_gaps.contains_key(id) {
                continue;
            }
            let vals: Vec<f64> = step
                .iter()
                .filter_map(|r| r.nu_gap_by_task.get(id).copied())
                .collect();
            task_gaps.insert(id.clone(), mean_sd(&vals));
        }
        out.push(AggregateRow {
            t: lead.t,
            lambda_dist: (!lambda.is_empty()).then(|| mean_sd(&lambda)),
            nu_gap_all: mean_sd(&step.iter().map(|r| r.nu_gap_all).collect::<Vec<_>>()),
            task_gaps,
            tv_dist: mean_sd(&step.iter().map(|r| r.tv_dist).collect::<Vec<_>>()),
            probed_frac: step.iter().filter(|r| r.probed).count() as f64 / step.len() as f64,
        });
    }
    Ok(out)
}

/// Writes the aggregate CSV: `<col>_mean`/`<col>_sd` pairs plus
/// `probed_frac`.
pub fn write_aggregate(
    path: impl AsRef<Path>,
    task_ids: &[String],
    rows: &[AggregateRow],
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "t".to_owned(),
        "lambda_dist_mean".to_owned(),
        "lambda_dist_sd".to_owned(),
        "nu_gap_all_mean".to_owned(),
        "nu_gap_all_sd".to_owned(),
    ];
    for id in task_ids {
        header.push(format!("nu_gap_task_{id}_mean"));
        header.push(format!("nu_gap_task_{id}_sd"));
    }
    header.extend(
        ["tv_dist_mean", "tv_dist_sd", "probed_frac"]
            .iter()
            .map(|s| s.to_string()),
    );
    writer.write_record(&header)?;
    for row in rows {
        let mut record = vec![
            row.t.to_string(),
            fmt_opt_f64(row.lambda_dist.map(|(m, _)| m)),
            fmt_opt_f64(row.lambda_dist.map(|(_, s)| s)),
            row.nu_gap_all.0.to_string(),
            row.nu_gap_all.1.to_string(),
        ];
        for id in task_ids {
            let cell = row.task_gaps.get(id);
            record.push(fmt_opt_f64(cell.map(|&(m, _)| m)));
            record.push(fmt_opt_f64(cell.map(|&(_, s)| s)));
        }
        record.push(row.tv_dist.0.to_string());
        record.push(row.tv_dist.1.to_string());
        record.push(row.probed_frac.to_string());
        writer.write_record(&record)?;
    }
    let bytes = writer.into_inner().context("flushing aggregate csv")?;
    std::fs::write(path.as_ref(), bytes)
        .with_context(|| format!("writing {}", path.as_ref().display()))?;
    Ok(())
}

// ─── SVG charts ─────────────────────────────────────────────────────────────

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 400.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 44.0;

struct Scale {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Scale {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-12);
        MARGIN_L + (v - self.x_min) / span * (CHART_W - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        CHART_H - MARGIN_B - (v - self.y_min) / span * (CHART_H - MARGIN_T - MARGIN_B)
    }
}

/// One plotted series: a line through `points`, optionally wrapped in a
/// shaded `band` (lower, upper) of the same length.
pub struct ChartSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<(f64, f64, f64)>>,
    /// Draw markers instead of a connecting line (scatter).
    pub scatter: bool,
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_owned();
    }
    let a = v.abs();
    if (0.01..10_000.0).contains(&a) {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_owned()
    } else {
        format!("{v:.2e}")
    }
}

/// Renders a self-contained line/scatter chart.
pub fn chart_svg(title: &str, x_label: &str, y_label: &str, series: &[ChartSeries]) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
        if let Some(band) = &s.band {
            for &(_, lo, hi) in band {
                ys.push(lo);
                ys.push(hi);
            }
        }
    }
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let y_lo = ys.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let y_hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1e-9);
    let scale = Scale {
        x_min,
        x_max,
        y_min: y_lo,
        y_max: y_hi + 0.05 * (y_hi - y_lo).max(1e-9),
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" \
         viewBox=\"0 0 {CHART_W} {CHART_H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{CHART_W}\" height=\"{CHART_H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        CHART_W / 2.0,
        title
    ));

    // Axes.
    let (x0, y0) = (MARGIN_L, CHART_H - MARGIN_B);
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        CHART_W - MARGIN_R
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{MARGIN_T}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let fx = scale.x_min + (scale.x_max - scale.x_min) * i as f64 / 4.0;
        let px = scale.x(fx);
        svg.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 18.0,
            fmt_tick(fx)
        ));
        let fy = scale.y_min + (scale.y_max - scale.y_min) * i as f64 / 4.0;
        let py = scale.y(fy);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"black\"/>\n",
            x0 - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            py + 4.0,
            fmt_tick(fy)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + CHART_W - MARGIN_R) / 2.0,
        CHART_H - 8.0,
        x_label
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        (MARGIN_T + CHART_H - MARGIN_B) / 2.0,
        (MARGIN_T + CHART_H - MARGIN_B) / 2.0,
        y_label
    ));

    // Series: bands first so lines draw on top.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = &s.band {
            let mut pts: Vec<String> = band
                .iter()
                .map(|&(x, _, hi)| format!("{:.2},{:.2}", scale.x(x), scale.y(hi)))
                .collect();
            pts.extend(
                band.iter()
                    .rev()
                    .map(|&(x, lo, _)| format!("{:.2},{:.2}", scale.x(x), scale.y(lo))),
            );
            svg.push_str(&format!(
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                pts.join(" ")
            ));
        }
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.scatter {
            for &(x, y) in &s.points {
                svg.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>\n",
                    scale.x(x),
                    scale.y(y)
                ));
            }
        } else {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", scale.x(x), scale.y(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            CHART_W - MARGIN_R - 150.0,
            MARGIN_T + 16.0 * i as f64
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            CHART_W - MARGIN_R - 136.0,
            MARGIN_T + 16.0 * i as f64 + 9.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the chart set for a run: parameter distance and TV distance with
/// mean ± sd bands, reward gaps overall and per task, and the curriculum
/// scatter (selected task index over time, one series per seed).
pub fn render_charts(
    out_dir: impl AsRef<Path>,
    task_ids: &[String],
    seed_rows: &[(u64, Vec<MetricsRow>)],
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let rows_only: Vec<Vec<MetricsRow>> =
        seed_rows.iter().map(|(_, rows)| rows.clone()).collect();
    let aggs = aggregate(&rows_only)?;
    let mut written = Vec::new();

    let band_series = |label: &str, values: Vec<(usize, (f64, f64))>| ChartSeries {
        label: label.to_owned(),
        points: values.iter().map(|&(t, (m, _))| (t as f64, m)).collect(),
        band: Some(
            values
                .iter()
                .map(|&(t, (m, s))| (t as f64, (m - s).max(0.0), m + s))
                .collect(),
        ),
        scatter: false,
    };

    let lambda_vals: Vec<(usize, (f64, f64))> = aggs
        .iter()
        .filter_map(|a| a.lambda_dist.map(|v| (a.t, v)))
        .collect();
    if !lambda_vals.is_empty() {
        let svg = chart_svg(
            "Parameter distance to target",
            "step",
            "distance",
            &[band_series("mean ± sd", lambda_vals)],
        );
        let path = out_dir.join("lambda_dist.svg");
        std::fs::write(&path, svg)?;
        written.push(path);
    }

    let mut gap_series = vec![band_series(
        "all tasks",
        aggs.iter().map(|a| (a.t, a.nu_gap_all)).collect(),
    )];
    for id in task_ids {
        let vals: Vec<(f64, f64)> = aggs
            .iter()
            .filter_map(|a| a.task_gaps.get(id).map(|&(m, _)| (a.t as f64, m)))
            .collect();
        if !vals.is_empty() {
            gap_series.push(ChartSeries {
                label: id.clone(),
                points: vals,
                band: None,
                scatter: false,
            });
        }
    }
    let svg = chart_svg("Expected-reward gap", "step", "gap", &gap_series);
    let path = out_dir.join("nu_gap.svg");
    std::fs::write(&path, svg)?;
    written.push(path);

    let svg = chart_svg(
        "Occupancy total-variation distance",
        "step",
        "TV distance",
        &[band_series(
            "mean ± sd",
            aggs.iter().map(|a| (a.t, a.tv_dist)).collect(),
        )],
    );
    let path = out_dir.join("tv_dist.svg");
    std::fs::write(&path, svg)?;
    written.push(path);

    let task_index: BTreeMap<&str, usize> = task_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let curriculum: Vec<ChartSeries> = seed_rows
        .iter()
        .map(|(seed, rows)| ChartSeries {
            label: format!("seed {seed}"),
            points: rows
                .iter()
                .filter_map(|r| {
                    let idx = task_index.get(r.sel_task.as_deref()?)?;
                    Some((r.t as f64, *idx as f64))
                })
                .collect(),
            band: None,
            scatter: true,
        })
        .collect();
    if curriculum.iter().any(|s| !s.points.is_empty()) {
        let svg = chart_svg("Teaching curriculum", "step", "task index", &curriculum);
        let path = out_dir.join("curriculum.svg");
        std::fs::write(&path, svg)?;
        written.push(path);
    }

    Ok(written)
}

// ─── Tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> (Vec<String>, Vec<MetricsRow>) {
        let task_ids = vec!["T0".to_owned(), "T1".to_owned()];
        let gaps =
            |a: f64, b: f64| BTreeMap::from([("T0".to_owned(), a), ("T1".to_owned(), b)]);
        let rows = vec![
            MetricsRow {
                t: 0,
                lambda_dist: Some(1.25),
                nu_gap_all: 0.5,
                nu_gap_by_task: gaps(0.25, 1.0 / 3.0),
                tv_dist: 0.75,
                sel_state: None,
                sel_task: None,
                objective: None,
                probed: false,
            },
            MetricsRow {
                t: 1,
                lambda_dist: Some(1.0),
                nu_gap_all: 0.4,
                nu_gap_by_task: gaps(0.2, 0.3),
                tv_dist: 0.7,
                sel_state: Some(12),
                sel_task: Some("T1".to_owned()),
                objective: Some(-0.0625),
                probed: true,
            },
        ];
        (task_ids, rows)
    }

    #[test]
    fn csv_round_trip_reproduces_rows_exactly() {
        let (task_ids, rows) = sample_rows();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seed_1.csv");
        write_rows(&path, &task_ids, &rows).unwrap();
        let (ids_back, rows_back) = read_rows(&path).unwrap();
        assert_eq!(ids_back, task_ids);
        assert_eq!(rows_back, rows);
    }

    #[test]
    fn identical_rows_serialize_to_identical_bytes() {
        let (task_ids, rows) = sample_rows();
        let a = rows_to_csv_string(&task_ids, &rows).unwrap();
        let b = rows_to_csv_string(&task_ids, &rows).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("t,lambda_dist,nu_gap_all,nu_gap_task_T0,nu_gap_task_T1,tv_dist"));
        // Empty selection cells on the t=0 row.
        let line0 = a.lines().nth(1).unwrap();
        assert!(line0.ends_with(",,,,0"), "line {line0:?}");
    }

    #[test]
    fn missing_lambda_dist_leaves_the_column_empty_but_valid() {
        let (task_ids, mut rows) = sample_rows();
        for row in &mut rows {
            row.lambda_dist = None;
        }
        let text = rows_to_csv_string(&task_ids, &rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seed.csv");
        std::fs::write(&path, &text).unwrap();
        let (_, back) = read_rows(&path).unwrap();
        assert!(back.iter().all(|r| r.lambda_dist.is_none()));

        let aggs = aggregate(&[back]).unwrap();
        assert!(aggs.iter().all(|a| a.lambda_dist.is_none()));
    }

    #[test]
    fn aggregate_matches_hand_computed_mean_and_sd() {
        let (_, rows) = sample_rows();
        let mut shifted = rows.clone();
        for row in &mut shifted {
            row.lambda_dist = row.lambda_dist.map(|v| v + 0.5);
            row.nu_gap_all += 0.1;
            row.probed = true;
        }
        let aggs = aggregate(&[rows, shifted]).unwrap();
        assert_eq!(aggs.len(), 2);
        // Means of {1.25, 1.75} and {0.5, 0.6}; sd of a symmetric pair is
        // |diff|/√2.
        let a0 = &aggs[0];
        assert!((a0.lambda_dist.unwrap().0 - 1.5).abs() < 1e-12);
        assert!((a0.lambda_dist.unwrap().1 - 0.5 / 2f64.sqrt()).abs() < 1e-12);
        assert!((a0.nu_gap_all.0 - 0.55).abs() < 1e-12);
        assert_eq!(a0.probed_frac, 0.5);
        assert_eq!(aggs[1].probed_frac, 1.0);
    }

    #[test]
    fn aggregate_rejects_mismatched_seed_logs() {
        let (_, rows) = sample_rows();
        let short = vec![rows[0].clone()];
        assert!(aggregate(&[rows, short]).is_err());
    }

    #[test]
    fn charts_are_written_and_well_formed() {
        let (task_ids, rows) = sample_rows();
        let dir = tempfile::tempdir().unwrap();
        let written = render_charts(dir.path(), &task_ids, &[(1, rows.clone()), (2, rows)])
            .unwrap();
        let names: Vec<_> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_owned())
            .collect();
        assert!(names.contains(&"lambda_dist.svg".to_owned()));
        assert!(names.contains(&"nu_gap.svg".to_owned()));
        assert!(names.contains(&"tv_dist.svg".to_owned()));
        assert!(names.contains(&"curriculum.svg".to_owned()));
        for path in &written {
            let text = std::fs::read_to_string(path).unwrap();
            assert!(text.starts_with("<svg"));
            assert!(text.trim_end().ends_with("</svg>"));
        }
    }
}
