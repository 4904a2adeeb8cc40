//! Deterministic SVG rendering: scene geometry, executed trajectories,
//! and the zero-level contour of a value-field heading slice. Outputs are
//! pure functions of their inputs; coordinates are written with fixed
//! precision so identical inputs give identical bytes.

use std::collections::HashMap;
use std::fmt::Write;

use crate::environment::Scene;
use crate::hj::ValueField;

/// Polyline palette, one color per trace in order.
const PALETTE: [&str; 6] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];
const BRT_COLOR: &str = "#18867d";
const OBSTACLE_COLOR: &str = "#9e9e9e";

#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub width_px: f64,
    pub margin_px: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width_px: 640.0,
            margin_px: 24.0,
        }
    }
}

/// One labelled planar trajectory.
#[derive(Debug, Clone)]
pub struct Trace {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

/// Zero-level polylines of a scalar slice; a polyline whose first and
/// last points coincide is a closed loop.
#[derive(Debug, Clone, Default)]
pub struct SliceContour {
    pub polylines: Vec<Vec<[f64; 2]>>,
}

/// Marching squares over a regular grid. `values` is indexed
/// [ix * ys.len() + iy]; a point is inside at values <= 0. Crossings are
/// linearly interpolated; saddle cells split by the cell-center average.
pub fn zero_contours(values: &[f64], xs: &[f64], ys: &[f64]) -> SliceContour {
    let nx = xs.len();
    let ny = ys.len();
    assert_eq!(values.len(), nx * ny);
    // Nodes exactly on the level set would place crossings at shared grid
    // corners, where more than two segments meet and chaining falls
    // apart. Nudge them strictly inside so every crossing stays interior
    // to its edge.
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let nudge = -(max_abs.max(1.0) * 1e-9);
    let values: Vec<f64> = values
        .iter()
        .map(|&v| if v == 0.0 { nudge } else { v })
        .collect();
    let v = |i: usize, j: usize| values[i * ny + j];
    let inside = |val: f64| val <= 0.0;

    // Crossing point on the edge from (pa, va) to (pb, vb).
    let crossing = |pa: [f64; 2], va: f64, pb: [f64; 2], vb: f64| -> [f64; 2] {
        let t = va / (va - vb);
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };

    let mut segments: Vec<([f64; 2], [f64; 2])> = Vec::new();
    for i in 0..nx.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            let (a, b, c, d) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
            let pa = [xs[i], ys[j]];
            let pb = [xs[i + 1], ys[j]];
            let pc = [xs[i + 1], ys[j + 1]];
            let pd = [xs[i], ys[j + 1]];
            let case = (inside(a) as usize)
                | (inside(b) as usize) << 1
                | (inside(c) as usize) << 2
                | (inside(d) as usize) << 3;
            if case == 0 || case == 15 {
                continue;
            }
            // Edge crossings: 0 bottom a-b, 1 right b-c, 2 top d-c,
            // 3 left a-d.
            let edge = |e: usize| -> [f64; 2] {
                match e {
                    0 => crossing(pa, a, pb, b),
                    1 => crossing(pb, b, pc, c),
                    2 => crossing(pd, d, pc, c),
                    _ => crossing(pa, a, pd, d),
                }
            };
            let pairs: &[(usize, usize)] = match case {
                1 => &[(3, 0)],
                2 => &[(0, 1)],
                3 => &[(3, 1)],
                4 => &[(1, 2)],
                5 => {
                    if inside((a + b + c + d) * 0.25) {
                        &[(0, 1), (2, 3)]
                    } else {
                        &[(0, 3), (1, 2)]
                    }
                }
                6 => &[(0, 2)],
                7 => &[(3, 2)],
                8 => &[(2, 3)],
                9 => &[(0, 2)],
                10 => {
                    if inside((a + b + c + d) * 0.25) {
                        &[(0, 3), (1, 2)]
                    } else {
                        &[(0, 1), (2, 3)]
                    }
                }
                11 => &[(1, 2)],
                12 => &[(3, 1)],
                13 => &[(0, 1)],
                _ => &[(0, 3)],
            };
            for &(e1, e2) in pairs {
                segments.push((edge(e1), edge(e2)));
            }
        }
    }
    SliceContour {
        polylines: chain_segments(&segments),
    }
}

fn key(p: [f64; 2]) -> (u64, u64) {
    // Shared edges produce bit-identical crossings in both cells, so the
    // raw bits are a sound join key.
    (p[0].to_bits(), p[1].to_bits())
}

/// Join undirected segments into maximal polylines. Open chains start at
/// degree-1 endpoints; the remainder are closed loops (first point
/// repeated last).
fn chain_segments(segments: &[([f64; 2], [f64; 2])]) -> Vec<Vec<[f64; 2]>> {
    let mut adjacency: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
    for (idx, (p, q)) in segments.iter().enumerate() {
        adjacency.entry(key(*p)).or_default().push(idx);
        adjacency.entry(key(*q)).or_default().push(idx);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    let walk = |seed: ([f64; 2], [f64; 2]), used: &mut [bool]| {
        let mut line = vec![seed.0, seed.1];
        loop {
            let tail = *line.last().unwrap();
            let Some(&next) = adjacency[&key(tail)].iter().find(|&&i| !used[i]) else {
                break;
            };
            used[next] = true;
            let (a, b) = segments[next];
            line.push(if key(a) == key(tail) { b } else { a });
        }
        line
    };
    // Open chains first so loops never start mid-chain.
    for pass in 0..2 {
        for idx in 0..segments.len() {
            if used[idx] {
                continue;
            }
            let (p, q) = segments[idx];
            let deg_p = adjacency[&key(p)].len();
            let deg_q = adjacency[&key(q)].len();
            if pass == 0 && deg_p != 1 && deg_q != 1 {
                continue;
            }
            // Walk outward from a degree-1 end when there is one.
            let seed = if deg_q == 1 && deg_p != 1 { (q, p) } else { (p, q) };
            used[idx] = true;
            polylines.push(walk(seed, &mut used));
        }
    }
    polylines
}

/// Signed area via the shoelace formula; the polyline is treated as
/// closed.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        twice += x0 * y1 - x1 * y0;
    }
    0.5 * twice
}

/// Ray-casting point-in-polygon test.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        if (y0 > p[1]) != (y1 > p[1]) {
            let x_cross = x0 + (p[1] - y0) / (y1 - y0) * (x1 - x0);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Zero-level contour of V(., ., heading) over the field's own xy nodes.
/// The field must be 3-dimensional with xy as the first two axes.
pub fn brt_slice_contours(vf: &ValueField<f64>, heading: f64) -> SliceContour {
    let grid = vf.grid();
    assert_eq!(grid.dims(), 3, "heading slice needs a 3-d field");
    let ax = grid.axis(0);
    let ay = grid.axis(1);
    let xs: Vec<f64> = (0..ax.count).map(|i| ax.node(i)).collect();
    let ys: Vec<f64> = (0..ay.count).map(|j| ay.node(j)).collect();
    let mut values = Vec::with_capacity(xs.len() * ys.len());
    for &x in &xs {
        for &y in &ys {
            values.push(vf.value(&[x, y, heading]));
        }
    }
    zero_contours(&values, &xs, &ys)
}

fn fmt_px(v: f64) -> String {
    format!("{v:.2}")
}

/// Render a scene with an optional unsafe-set contour and trajectories.
pub fn render_svg(
    scene: &Scene<f64>,
    contour: Option<&SliceContour>,
    traces: &[Trace],
    opts: &RenderOptions,
) -> String {
    let domain = scene.domain();
    let world_w = domain.extent(0);
    let world_h = domain.extent(1);
    let scale = (opts.width_px - 2.0 * opts.margin_px) / world_w;
    let height_px = world_h * scale + 2.0 * opts.margin_px;
    let px = |p: [f64; 2]| -> (String, String) {
        let x = opts.margin_px + (p[0] - domain.min[0]) * scale;
        let y = height_px - opts.margin_px - (p[1] - domain.min[1]) * scale;
        (fmt_px(x), fmt_px(y))
    };
    let path_of = |points: &[[f64; 2]]| -> String {
        let mut d = String::new();
        for (i, &p) in points.iter().enumerate() {
            let (x, y) = px(p);
            let _ = write!(d, "{}{},{}", if i == 0 { "M" } else { " L" }, x, y);
        }
        d
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        fmt_px(opts.width_px),
        fmt_px(height_px),
        fmt_px(opts.width_px),
        fmt_px(height_px)
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");

    // Domain frame.
    let (fx, fy) = px([domain.min[0], domain.max[1]]);
    let _ = writeln!(
        svg,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>",
        fx,
        fy,
        fmt_px(world_w * scale),
        fmt_px(world_h * scale)
    );

    match scene {
        Scene::Planar(env) => {
            for c in &env.obstacles {
                let (cx, cy) = px(c.center);
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{}\"/>",
                    cx,
                    cy,
                    fmt_px(c.radius * scale),
                    OBSTACLE_COLOR
                );
            }
        }
        Scene::Track(track) => {
            // Track band drawn as a fat centerline stroke.
            let total = track.total_length();
            let n = 256;
            let pts: Vec<[f64; 2]> = (0..=n)
                .map(|i| track.point_at(total * i as f64 / n as f64).0)
                .collect();
            let _ = writeln!(
                svg,
                "<path d=\"{} Z\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\" stroke-linejoin=\"round\"/>",
                path_of(&pts),
                OBSTACLE_COLOR,
                fmt_px(2.0 * track.half_width() * scale)
            );
        }
    }

    if let Some(contour) = contour {
        for line in &contour.polylines {
            let _ = writeln!(
                svg,
                "<path d=\"{}\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"{}\" stroke-width=\"1.5\"/>",
                path_of(line),
                BRT_COLOR,
                BRT_COLOR
            );
        }
    }

    for (i, trace) in traces.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if trace.points.is_empty() {
            continue;
        }
        let _ = writeln!(
            svg,
            "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            path_of(&trace.points),
            color
        );
        let (sx, sy) = px(trace.points[0]);
        let _ = writeln!(
            svg,
            "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>",
            sx, sy, color
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"{}\">{}</text>",
            fmt_px(opts.margin_px + 4.0),
            fmt_px(opts.margin_px + 14.0 * (i as f64 + 1.0)),
            color,
            trace.label
        );
    }

    svg.push_str("</svg>\n");
    svg
}
