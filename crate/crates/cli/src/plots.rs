//! Static SVG views of the result tables. Each figure is drawn from CSV rows
//! alone and carries a provenance comment.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::anyhow;
use beamlab::experiments::CurveRow;
use plotters::prelude::*;

use crate::tables::{FirstStageCsv, SparsityCsv};

const SIZE: (u32, u32) = (720, 480);

fn palette(i: usize) -> RGBColor {
    const C: [RGBColor; 8] = [
        RGBColor(31, 119, 180),
        RGBColor(255, 127, 14),
        RGBColor(44, 160, 44),
        RGBColor(214, 39, 40),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
        RGBColor(227, 119, 194),
        RGBColor(127, 127, 127),
    ];
    C[i % C.len()]
}

fn stamp(path: &Path, provenance: &str) -> anyhow::Result<()> {
    let svg = std::fs::read_to_string(path)?;
    let comment = format!("<!-- {} -->\n", provenance.replace("--", "- -"));
    std::fs::write(path, comment + &svg)?;
    Ok(())
}

fn err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plot: {e:?}")
}

/// Coverage against sample size (log2 axis), one line per method on the
/// pooled stratum, error bars of one standard deviation.
pub fn scaling(rows: &[CurveRow], path: &Path, provenance: &str) -> anyhow::Result<()> {
    let mut series: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows.iter().filter(|r| r.stratum == "all") {
        if !series.contains_key(r.method.as_str()) {
            order.push(r.method.as_str());
        }
        series.entry(&r.method).or_default().push(((r.point as f64).log2(), r.mean, r.std));
    }
    let axis = rows.first().map(|r| r.axis.as_str()).unwrap_or("sample_size");
    let x_max = series.values().flatten().map(|p| p.0).fold(1.0, f64::max);
    {
        let root = SVGBackend::new(path, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("coverage vs {axis}"), ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(-0.25..x_max + 0.25, 0.0..1.0)
            .map_err(err)?;
        chart
            .configure_mesh()
            .x_desc(axis)
            .y_desc("coverage")
            .x_labels(x_max as usize + 1)
            .x_label_formatter(&|x| format!("{}", 2f64.powf(*x).round()))
            .draw()
            .map_err(err)?;
        for (i, name) in order.iter().enumerate() {
            let pts = &series[name];
            let color = palette(i);
            chart
                .draw_series(LineSeries::new(pts.iter().map(|p| (p.0, p.1)), color.stroke_width(2)))
                .map_err(err)?
                .label(*name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            chart
                .draw_series(pts.iter().map(|p| ErrorBar::new_vertical(p.0, p.1 - p.2, p.1, p.1 + p.2, color.filled(), 6)))
                .map_err(err)?;
        }
        chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw().map_err(err)?;
        root.present().map_err(err)?;
    }
    stamp(path, provenance)
}

/// Selection success at the first stage against K, verifier (solid) and
/// oracle (dashed), one color per beam size, averaged over repeats.
pub fn first_stage(rows: &[FirstStageCsv], path: &Path, provenance: &str) -> anyhow::Result<()> {
    let mut acc: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.b, r.k)).or_default();
        e.0 += r.verifier_success;
        e.1 += r.oracle_success;
        e.2 += 1;
    }
    let bs: Vec<usize> = {
        let mut v: Vec<usize> = acc.keys().map(|k| k.0).collect();
        v.dedup();
        v
    };
    let x_max = acc.keys().map(|k| (k.1 as f64).log2()).fold(1.0, f64::max);
    {
        let root = SVGBackend::new(path, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("first-stage selection success", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(2.75..x_max + 0.25, 0.0..1.0)
            .map_err(err)?;
        chart
            .configure_mesh()
            .x_desc("candidates K")
            .y_desc("success")
            .x_label_formatter(&|x| format!("{}", 2f64.powf(*x).round()))
            .draw()
            .map_err(err)?;
        for (i, b) in bs.iter().enumerate() {
            let color = palette(i);
            let pts: Vec<(f64, f64, f64)> = acc
                .iter()
                .filter(|(k, _)| k.0 == *b)
                .map(|(k, v)| ((k.1 as f64).log2(), v.0 / v.2 as f64, v.1 / v.2 as f64))
                .collect();
            chart
                .draw_series(LineSeries::new(pts.iter().map(|p| (p.0, p.1)), color.stroke_width(2)))
                .map_err(err)?
                .label(format!("verifier b={b}"))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            chart
                .draw_series(DashedLineSeries::new(pts.iter().map(|p| (p.0, p.2)), 6, 4, color.stroke_width(1)))
                .map_err(err)?
                .label(format!("oracle b={b}"))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(1)));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperLeft)
            .background_style(WHITE)
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
        root.present().map_err(err)?;
    }
    stamp(path, provenance)
}

/// Share of verifier failures per sparsity bin, one group of bars per
/// method and grid point.
pub fn sparsity(rows: &[SparsityCsv], path: &Path, provenance: &str) -> anyhow::Result<()> {
    let mut groups: Vec<(String, [f64; 4])> = Vec::new();
    for r in rows {
        let name = format!("{} p{}", r.method, r.point);
        if groups.last().map(|g| &g.0) != Some(&name) {
            groups.push((name, [0.0; 4]));
        }
        groups.last_mut().unwrap().1[r.bin.min(3)] = r.mass;
    }
    let n = groups.len().max(1) as f64;
    let width = 0.8 / n;
    {
        let root = SVGBackend::new(path, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("verifier failures by valid-path sparsity", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(-0.5..3.5, 0.0..1.0)
            .map_err(err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_desc("sparsity bin")
            .y_desc("share of failed stages")
            .x_labels(4)
            .x_label_formatter(&|x: &f64| {
                let i = x.round() as i32;
                if (0..4).contains(&i) && (x - i as f64).abs() < 1e-6 {
                    format!("[{:.2},{:.2}{}", i as f64 / 4.0, (i + 1) as f64 / 4.0, if i == 3 { "]" } else { ")" })
                } else {
                    String::new()
                }
            })
            .draw()
            .map_err(err)?;
        for (g, (name, mass)) in groups.iter().enumerate() {
            let color = palette(g);
            let left = |bin: usize| bin as f64 - 0.4 + g as f64 * width;
            chart
                .draw_series(mass.iter().enumerate().map(|(bin, &m)| {
                    Rectangle::new([(left(bin), 0.0), (left(bin) + width, m)], color.filled())
                }))
                .map_err(err)?
                .label(name.clone())
                .legend(move |(x, y)| Rectangle::new([(x, y - 4), (x + 12, y + 4)], color.filled()));
        }
        chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw().map_err(err)?;
        root.present().map_err(err)?;
    }
    stamp(path, provenance)
}
