//! Map export: CSV of projected points, a JSON sidecar with per-group counts
//! and convex hulls, and a static SVG scatter plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ProjectedPoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub projector: String,
    pub seed: u64,
    /// Embedding dimension before projection.
    pub d: usize,
    pub counts: BTreeMap<String, usize>,
    /// Counter-clockwise hull of each value id's points.
    pub hulls: BTreeMap<String, Vec<[f64; 2]>>,
}

impl MapSidecar {
    pub fn new(projector: &str, seed: u64, d: usize, points: &[ProjectedPoint]) -> Self {
        let mut groups: BTreeMap<String, Vec<[f64; 2]>> = BTreeMap::new();
        for p in points {
            groups
                .entry(p.value_id.to_string())
                .or_default()
                .push([p.x, p.y]);
        }
        MapSidecar {
            projector: projector.to_string(),
            seed,
            d,
            counts: groups.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
            hulls: groups
                .into_iter()
                .map(|(k, v)| (k, convex_hull(v)))
                .collect(),
        }
    }
}

/// Andrew's monotone chain; collinear points on the boundary are dropped.
pub fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

#[derive(Serialize)]
struct Row<'a> {
    qa_id: &'a str,
    llm: &'a str,
    lang: &'a str,
    x: f64,
    y: f64,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `<path>` (CSV) and the sidecar next to it with a `.json` extension.
pub fn write_map(path: &Path, points: &[ProjectedPoint], sidecar: &MapSidecar) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for p in points {
        w.serialize(Row {
            qa_id: &p.qa_id,
            llm: &p.value_id.llm,
            lang: &p.value_id.lang,
            x: p.x,
            y: p.y,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let sp = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    text.push('\n');
    std::fs::write(&sp, text).map_err(|e| Error::io(&sp, e))?;
    Ok(sp)
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// A static scatter plot with one colour and hull per value id.
pub fn render_svg(points: &[ProjectedPoint], sidecar: &MapSidecar) -> String {
    const SIZE: f64 = 800.0;
    const PAD: f64 = 40.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let sx = |x: f64| PAD + (x - x0) / span * (SIZE - 2.0 * PAD);
    let sy = |y: f64| SIZE - PAD - (y - y0) / span * (SIZE - 2.0 * PAD);
    let colour: BTreeMap<&str, &str> = sidecar
        .counts
        .keys()
        .enumerate()
        .map(|(i, k)| (k.as_str(), PALETTE[i % PALETTE.len()]))
        .collect();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (group, hull) in &sidecar.hulls {
        if hull.len() >= 3 {
            let pts: Vec<String> = hull
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
                .collect();
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.12" stroke="{}"><title>{}</title></polygon>"#,
                pts.join(" "),
                colour[group.as_str()],
                colour[group.as_str()],
                xml_escape(group)
            );
        }
    }
    for p in points {
        let g = p.value_id.to_string();
        let c = colour.get(g.as_str()).copied().unwrap_or("#000000");
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"><title>{}</title></circle>"#,
            sx(p.x),
            sy(p.y),
            xml_escape(&p.qa_id)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
