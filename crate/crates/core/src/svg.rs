//! SVG scene export: world, obstacle, learned leaf boxes and trajectories.

use std::fmt::Write as _;

use crate::navenv::NavConfig;
use crate::octree::HyperRect;

const SIZE: f64 = 400.0;
const MARGIN: f64 = 10.0;

struct Frame {
    min: [f64; 2],
    scale: [f64; 2],
}

impl Frame {
    fn new(nav: &NavConfig) -> Self {
        let span = |j: usize| nav.world_max[j] - nav.world_min[j];
        Self {
            min: nav.world_min,
            scale: [SIZE / span(0), SIZE / span(1)],
        }
    }

    /// World to pixel, y pointing up.
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let x = MARGIN + (p[0] - self.min[0]) * self.scale[0];
        let y = MARGIN + SIZE - (p[1] - self.min[1]) * self.scale[1];
        (x, y)
    }

    fn rect(&self, out: &mut String, lo: [f64; 2], hi: [f64; 2], class: &str, style: &str) {
        let (x0, y1) = self.map(lo);
        let (x1, y0) = self.map(hi);
        let _ = writeln!(
            out,
            r#"  <rect class="{class}" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" {style}/>"#,
            x1 - x0,
            y1 - y0
        );
    }
}

/// Renders the scene. Leaf boxes are drawn over their first two dimensions.
pub fn render_scene(nav: &NavConfig, leaves: &[HyperRect], trajectories: &[Vec<[f64; 2]>]) -> String {
    let frame = Frame::new(nav);
    let total = SIZE + 2.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    frame.rect(&mut out, nav.world_min, nav.world_max, "world", r#"fill="white" stroke="black""#);
    frame.rect(
        &mut out,
        nav.obstacle_lo,
        nav.obstacle_hi,
        "obstacle",
        r#"fill="red" fill-opacity="0.4" stroke="none""#,
    );
    for leaf in leaves.iter().filter(|l| l.dim() >= 2) {
        frame.rect(
            &mut out,
            [leaf.lo[0], leaf.lo[1]],
            [leaf.hi[0], leaf.hi[1]],
            "leaf",
            r#"fill="none" stroke="blue" stroke-width="2""#,
        );
    }
    for path in trajectories.iter().filter(|p| !p.is_empty()) {
        let points: Vec<String> = path
            .iter()
            .map(|&p| {
                let (x, y) = frame.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"  <polyline class="trajectory" points="{}" fill="none" stroke="black" stroke-width="1"/>"#,
            points.join(" ")
        );
    }
    for (p, class, colour) in [(nav.start, "start", "green"), (nav.goal, "goal", "gold")] {
        let (x, y) = frame.map(p);
        let _ = writeln!(out, r#"  <circle class="{class}" cx="{x:.2}" cy="{y:.2}" r="5" fill="{colour}"/>"#);
    }
    out.push_str("</svg>\n");
    out
}
