//! Mapping pixel-space text boxes onto the image-token grid.
//!
//! Ground-truth text regions arrive as quadrilaterals (possibly rotated).
//! A grid cell counts as text if at least half of its patch area lies under
//! the union of the boxes — a center-in-box rule would drop thin text lines
//! that straddle patch boundaries.

use crate::error::{Error, Result};
use crate::trace::{sort_selection_pairs, SelectionOrigin, TokenLayout, TokenSelection};

/// A quadrilateral in pixel coordinates, vertices in drawing order.
pub type QuadBox = [[f64; 2]; 4];

type Point = [f64; 2];

const AREA_EPS: f64 = 1e-12;
/// Slack on the ≥ 0.5 coverage rule to absorb clipping round-off.
const COVER_TOL: f64 = 1e-9;

fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

fn ccw(poly: &[Point]) -> Vec<Point> {
    if signed_area(poly) < 0.0 {
        poly.iter().rev().copied().collect()
    } else {
        poly.to_vec()
    }
}

/// Sutherland–Hodgman: clip `subject` against convex counter-clockwise
/// `clip`. Both inputs convex here, so the result is convex too.
fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let inside = |p: Point| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0;
        let intersect = |p: Point, q: Point| -> Point {
            let d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            let d2 = (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]);
            let t = d1 / (d1 - d2);
            [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
        };
        let input = std::mem::take(&mut output);
        for i in 0..input.len() {
            let cur = input[i];
            let next = input[(i + 1) % input.len()];
            match (inside(cur), inside(next)) {
                (true, true) => output.push(next),
                (true, false) => output.push(intersect(cur, next)),
                (false, true) => {
                    output.push(intersect(cur, next));
                    output.push(next);
                }
                (false, false) => {}
            }
        }
    }
    output
}

/// Area of the union of convex polygons by inclusion-exclusion, pruning
/// subset chains as soon as an intersection empties out.
fn union_area(polys: &[Vec<Point>]) -> f64 {
    fn descend(polys: &[Vec<Point>], from: usize, current: &[Point], sign: f64, acc: &mut f64) {
        for j in from..polys.len() {
            let inter = clip_convex(current, &polys[j]);
            let a = area(&inter);
            if a <= AREA_EPS {
                continue;
            }
            *acc += sign * a;
            descend(polys, j + 1, &inter, -sign, acc);
        }
    }
    let mut acc = 0.0;
    for i in 0..polys.len() {
        let a = area(&polys[i]);
        if a <= AREA_EPS {
            continue;
        }
        acc += a;
        descend(polys, i + 1, &polys[i], -1.0, &mut acc);
    }
    acc
}

/// Split a quad along whichever diagonal reproduces its shoelace area, so
/// convex and moderately concave quads both decompose exactly.
fn triangulate(q: &QuadBox) -> Vec<Vec<Point>> {
    let quad_area = area(q);
    let split_a = [vec![q[0], q[1], q[2]], vec![q[0], q[2], q[3]]];
    let sum_a: f64 = split_a.iter().map(|t| area(t)).sum();
    let chosen = if (sum_a - quad_area).abs() <= quad_area.max(1.0) * 1e-9 {
        split_a
    } else {
        [vec![q[1], q[2], q[3]], vec![q[1], q[3], q[0]]]
    };
    chosen
        .into_iter()
        .filter(|t| area(t) > AREA_EPS)
        .map(|t| ccw(&t))
        .collect()
}

fn bbox(poly: &[Point]) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        b.0 = b.0.min(p[0]);
        b.1 = b.1.min(p[1]);
        b.2 = b.2.max(p[0]);
        b.3 = b.3.max(p[1]);
    }
    b
}

/// Select every image token whose patch cell is covered at least half by the
/// union of `boxes`. Scores are the coverage fractions, sorted descending
/// with ties broken by ascending token index.
pub fn boxes_to_tokens(boxes: &[QuadBox], layout: &TokenLayout) -> Result<TokenSelection> {
    layout.validate()?;
    let (w, h) = (layout.image_w as f64, layout.image_h as f64);
    for (bi, q) in boxes.iter().enumerate() {
        for p in q {
            if !p[0].is_finite() || !p[1].is_finite() || p[0] < 0.0 || p[0] > w || p[1] < 0.0 || p[1] > h
            {
                return Err(Error::validation(format!(
                    "box {bi} vertex ({}, {}) outside image {w}x{h}",
                    p[0], p[1]
                )));
            }
        }
    }

    let mut tris: Vec<Vec<Point>> = Vec::new();
    for q in boxes {
        if area(q) <= AREA_EPS {
            continue; // degenerate box: ignore
        }
        tris.extend(triangulate(q));
    }

    let patch = layout.patch_size as f64;
    let patch_area = patch * patch;
    let mut pairs: Vec<(usize, f32)> = Vec::new();
    if !tris.is_empty() {
        let boxes_of: Vec<_> = tris.iter().map(|t| bbox(t)).collect();
        for row in 0..layout.grid_h {
            for col in 0..layout.grid_w {
                let (x0, y0) = (col as f64 * patch, row as f64 * patch);
                let (x1, y1) = (x0 + patch, y0 + patch);
                let cell = vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
                let pieces: Vec<Vec<Point>> = tris
                    .iter()
                    .zip(&boxes_of)
                    .filter(|(_, b)| b.0 < x1 && b.2 > x0 && b.1 < y1 && b.3 > y0)
                    .map(|(t, _)| clip_convex(t, &cell))
                    .filter(|p| area(p) > AREA_EPS)
                    .collect();
                if pieces.is_empty() {
                    continue;
                }
                let frac = union_area(&pieces) / patch_area;
                if frac + COVER_TOL >= 0.5 {
                    pairs.push((layout.grid_to_seq(row, col), frac.min(1.0) as f32));
                }
            }
        }
    }
    sort_selection_pairs(&mut pairs);
    let (indices, scores) = pairs.into_iter().unzip();
    TokenSelection::new(indices, scores, SelectionOrigin::GroundTruthBoxes, layout)
}

/// Axis-aligned helper for tests and manifest tooling.
pub fn rect_box(x0: f64, y0: f64, x1: f64, y1: f64) -> QuadBox {
    [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}
