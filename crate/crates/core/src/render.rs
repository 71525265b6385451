//! SVG renderings: attention heat-maps beside crop semantics, and
//! trajectory overlays on the map. Output is byte-deterministic.

use std::fmt::Write;

use jointdrive_sim::geometry::rect_corners;
use jointdrive_sim::{Pose, Vec2, WorldSnapshot};

use crate::controller::PredictedVehicle;
use crate::error::{CoreError, Result};
use crate::raster::{CH_EGO, CH_LANE_LINE, CH_OCCUPANCY, CH_ROAD};

const CELL: f64 = 12.0;

fn heat_color(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * v).round() as u8;
    let b = (255.0 * (1.0 - v)).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

/// Heat-map of accumulated attention (`grid × grid`, row-major, values in
/// [0, 1]) to the right of the crop's semantic channels (`[C, s, s]` values).
/// Each heat-map square is a `rect` of class `heat-cell`.
pub fn attention_svg(heat: &[f64], grid: usize, crop: &[f64], crop_size: usize) -> Result<String> {
    if heat.len() != grid * grid {
        return Err(CoreError::LengthMismatch {
            what: "heat-map cells",
            expected: grid * grid,
            got: heat.len(),
        });
    }
    let plane = crop_size * crop_size;
    if crop.len() < (CH_EGO + 1) * plane {
        return Err(CoreError::LengthMismatch {
            what: "crop values",
            expected: (CH_EGO + 1) * plane,
            got: crop.len(),
        });
    }
    let side = crop_size as f64 * CELL;
    let hcell = side / grid as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}">"#,
        2.0 * side + 30.0,
        side + 20.0,
        2.0 * side + 30.0,
        side + 20.0
    );
    let _ = writeln!(s, r##"<g transform="translate(10,10)"><rect width="{side:.0}" height="{side:.0}" fill="#202020"/>"##);
    for r in 0..crop_size {
        for c in 0..crop_size {
            let at = |ch: usize| crop[ch * plane + r * crop_size + c];
            let color = if at(CH_EGO) > 0.5 {
                "#3c8cff"
            } else if at(CH_OCCUPANCY) > 0.5 {
                "#ff8c28"
            } else if at(CH_LANE_LINE) > 0.5 {
                "#f0f0f0"
            } else if at(CH_ROAD) > 0.5 {
                "#707070"
            } else {
                continue;
            };
            let _ = writeln!(
                s,
                r#"<rect class="crop-cell" x="{:.1}" y="{:.1}" width="{CELL:.1}" height="{CELL:.1}" fill="{color}"/>"#,
                c as f64 * CELL,
                r as f64 * CELL
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g transform="translate({:.0},10)">"#, side + 20.0);
    for (i, v) in heat.iter().enumerate() {
        let (r, c) = (i / grid, i % grid);
        let _ = writeln!(
            s,
            r#"<rect class="heat-cell" x="{:.1}" y="{:.1}" width="{hcell:.1}" height="{hcell:.1}" fill="{}" data-value="{v:.6}"/>"#,
            c as f64 * hcell,
            r as f64 * hcell,
            heat_color(*v)
        );
    }
    let _ = writeln!(s, "</g>\n</svg>");
    Ok(s)
}

/// Trajectory overlay in the ego frame, x forward drawn upward.
pub struct OverlayView<'a> {
    pub snapshot: &'a WorldSnapshot,
    /// Planned ego waypoints in the ego frame.
    pub plan: &'a [Vec2],
    pub predictions: &'a [PredictedVehicle],
    /// Half-extent of the drawing, metres.
    pub extent: f64,
}

/// Lanes and footprints plus one `polyline.plan` and one
/// `polyline.prediction` per predicted vehicle.
pub fn overlay_svg(view: &OverlayView<'_>) -> Result<String> {
    let snap = view.snapshot;
    let ego = snap.ego().ok_or(CoreError::MissingVehicle(snap.ego_id))?;
    let ego_pose = ego.pose();
    let scale = 6.0;
    let size = 2.0 * view.extent * scale;
    let to_screen = |p: Vec2| (size / 2.0 - p.y * scale, size / 2.0 - p.x * scale);
    let points = |pts: &mut dyn Iterator<Item = Vec2>| {
        let mut out = String::new();
        for p in pts {
            let (x, y) = to_screen(p);
            if !out.is_empty() {
                out.push(' ');
            }
            let _ = write!(out, "{x:.2},{y:.2}");
        }
        out
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{size:.0}" viewBox="0 0 {size:.0} {size:.0}">"#
    );
    let _ = writeln!(s, r##"<rect width="{size:.0}" height="{size:.0}" fill="#f4f4f4"/>"##);
    for lane in &snap.map.lanes {
        let pts = points(&mut lane.centerline.iter().map(|&p| ego_pose.to_local(p)));
        let _ = writeln!(
            s,
            r##"<polyline class="lane" points="{pts}" fill="none" stroke="#c8c8c8" stroke-width="{:.1}"/>"##,
            lane.width * scale
        );
    }
    for v in &snap.vehicles {
        let corners = rect_corners(&ego_pose.relative(&v.pose()), v.length, v.width);
        let pts = points(&mut corners.into_iter());
        let class = if v.id == snap.ego_id { "vehicle ego" } else { "vehicle" };
        let _ = writeln!(s, r##"<polygon class="{class}" points="{pts}" fill="#5a5a5a"/>"##);
    }
    for p in view.predictions {
        let pts = points(&mut p.trajectory.iter().map(|&q| p.pose.to_world(q)));
        let _ = writeln!(
            s,
            r##"<polyline class="prediction" data-vehicle="{}" points="{pts}" fill="none" stroke="#e07020" stroke-width="2"/>"##,
            p.id
        );
    }
    let origin = Pose::new(0.0, 0.0, 0.0).position();
    let pts = points(&mut std::iter::once(origin).chain(view.plan.iter().copied()));
    let _ = writeln!(
        s,
        r##"<polyline class="plan" points="{pts}" fill="none" stroke="#2060e0" stroke-width="2.5"/>"##
    );
    let _ = writeln!(s, "</svg>");
    Ok(s)
}
