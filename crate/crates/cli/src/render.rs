//! SVG rendering of scenes and trajectories.
//!
//! SVG coordinates are world coordinates scaled by [`PIXELS_PER_METER`],
//! with no axis flip; viewers therefore show the map mirrored vertically
//! relative to the usual y-up world convention.

use gridnav_core::grid::fuse_traversability;
use gridnav_core::planner::TrajectoryRecord;
use gridnav_core::sim::Scene;

pub const PIXELS_PER_METER: f64 = 50.0;

pub fn render_svg(scene: &Scene, trajectory: Option<&[TrajectoryRecord]>) -> String {
    let trav = fuse_traversability(&scene.voxels);
    let meta = trav.meta;
    let ppm = PIXELS_PER_METER;
    let w = meta.width as f64 * meta.cell_size * ppm;
    let h = meta.height as f64 * meta.cell_size * ppm;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.3} {h:.3}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{w:.3}\" height=\"{h:.3}\" fill=\"white\"/>\n"
    ));

    // Blocked cells, merged into horizontal runs.
    let cell_px = meta.cell_size * ppm;
    for y in 0..meta.height {
        let mut x = 0usize;
        while x < meta.width {
            if !trav.blocked(x, y) {
                x += 1;
                continue;
            }
            let run_start = x;
            while x < meta.width && trav.blocked(x, y) {
                x += 1;
            }
            let px = meta.origin[0].mul_add(ppm, run_start as f64 * cell_px);
            let py = meta.origin[1].mul_add(ppm, y as f64 * cell_px);
            svg.push_str(&format!(
                "<rect x=\"{px:.3}\" y=\"{py:.3}\" width=\"{:.3}\" height=\"{cell_px:.3}\" fill=\"black\"/>\n",
                (x - run_start) as f64 * cell_px
            ));
        }
    }

    for obs in &scene.dynamic {
        svg.push_str(&format!(
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\" fill=\"orange\" fill-opacity=\"0.8\"/>\n",
            obs.center.x * ppm,
            obs.center.y * ppm,
            obs.radius * ppm
        ));
    }

    if let Some(records) = trajectory {
        if !records.is_empty() {
            let pts: Vec<String> = records
                .iter()
                .map(|r| format!("{:.3},{:.3}", r.x * ppm, r.y * ppm))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"blue\" stroke-width=\"2\"/>\n",
                pts.join(" ")
            ));
        }
    }

    svg.push_str(&format!(
        "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\" fill=\"green\"/>\n",
        scene.start.x * ppm,
        scene.start.y * ppm,
        0.15 * ppm
    ));
    svg.push_str(&format!(
        "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\" fill=\"none\" stroke=\"red\" stroke-width=\"2\"/>\n",
        scene.goal.x * ppm,
        scene.goal.y * ppm,
        0.25 * ppm
    ));
    svg.push_str("</svg>\n");
    svg
}
