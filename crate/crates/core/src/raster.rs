//! Ground-truth map-view rasterisation, the surrogate segmentation head and
//! the differentiable rotated-RoI crop.

use jointdrive_numerics::{Graph, Tensor, Var};
use jointdrive_sim::geometry::{point_in_polygon, point_in_rect, rect_corners, segment_distance};
use jointdrive_sim::{wrap_angle, Pose, Vec2, WorldSnapshot, MAX_SPEED};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const CH_ROAD: usize = 0;
pub const CH_LANE_LINE: usize = 1;
pub const CH_UNAVAILABLE: usize = 2;
pub const CH_OCCUPANCY: usize = 3;
pub const CH_VX: usize = 4;
pub const CH_VY: usize = 5;
pub const CH_SIN: usize = 6;
pub const CH_COS: usize = 7;
pub const CH_EGO: usize = 8;
pub const CH_ROUTE: usize = 9;
pub const CH_STOP: usize = 10;
/// Number of channels carrying information; the rest are reserved zeros.
pub const USED_CHANNELS: usize = 11;
pub const SEG_CLASSES: usize = 3;

/// Metric layout of the map-view grid in the ego frame. Row 0 is the far
/// forward edge and column 0 the far left edge, so cell `(r, c)` is centred at
/// `x = x_max − (r + ½)·cell`, `y = y_max − (c + ½)·cell`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub cell: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            channels: 16,
            height: 64,
            width: 64,
            cell: 1.0,
            x_max: 48.0,
            y_max: 32.0,
        }
    }
}

impl GridSpec {
    pub fn cell_center(&self, r: usize, c: usize) -> Vec2 {
        Vec2::new(
            self.x_max - (r as f64 + 0.5) * self.cell,
            self.y_max - (c as f64 + 0.5) * self.cell,
        )
    }

    /// Fractional (row, col) of an ego-frame point.
    pub fn to_pixel(&self, p: Vec2) -> [f64; 2] {
        [
            (self.x_max - p.x) / self.cell - 0.5,
            (self.y_max - p.y) / self.cell - 0.5,
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let x_min = self.x_max - self.height as f64 * self.cell;
        let y_min = self.y_max - self.width as f64 * self.cell;
        p.x > x_min && p.x < self.x_max && p.y > y_min && p.y < self.y_max
    }

    /// Inclusive row/column ranges whose centres may fall in the box.
    fn cells_in_box(&self, lo: Vec2, hi: Vec2) -> Option<(usize, usize, usize, usize)> {
        let r0 = ((self.x_max - hi.x) / self.cell - 0.5).floor().max(0.0);
        let r1 = ((self.x_max - lo.x) / self.cell - 0.5).ceil().min(self.height as f64 - 1.0);
        let c0 = ((self.y_max - hi.y) / self.cell - 0.5).floor().max(0.0);
        let c1 = ((self.y_max - lo.y) / self.cell - 0.5).ceil().min(self.width as f64 - 1.0);
        (r0 <= r1 && c0 <= c1).then_some((r0 as usize, r1 as usize, c0 as usize, c1 as usize))
    }
}

/// Vehicle-aligned crop geometry: `size × size` cells, the vehicle's frame
/// spans `x ∈ [x_max − size·cell, x_max]` and `y ∈ [−y_half, y_half]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropSpec {
    pub size: usize,
    pub cell: f64,
    pub x_max: f64,
    pub y_half: f64,
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec {
            size: 24,
            cell: 1.0,
            x_max: 18.0,
            y_half: 12.0,
        }
    }
}

impl CropSpec {
    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.x_max - (i as f64 + 0.5) * self.cell,
            self.y_half - (j as f64 + 0.5) * self.cell,
        )
    }
}

/// The map-view feature `F`: a `[C, H, W]` tensor plus its metric layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MapViewFeature {
    pub values: Tensor,
    pub grid: GridSpec,
}

impl MapViewFeature {
    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.grid.height * self.grid.width;
        &self.values.data()[ch * n..(ch + 1) * n]
    }

    /// Ground-truth segmentation targets `[3, H, W]`: road, lane line, unavailable.
    pub fn seg_targets(&self) -> Vec<f64> {
        let n = self.grid.height * self.grid.width;
        self.values.data()[..SEG_CLASSES * n].to_vec()
    }
}

struct Canvas<'a> {
    grid: GridSpec,
    data: &'a mut [f64],
}

impl Canvas<'_> {
    fn plane(&mut self, ch: usize) -> &mut [f64] {
        let n = self.grid.height * self.grid.width;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    /// Sets `ch` to `value` on every cell within `radius` of the polyline.
    fn stroke(&mut self, ch: usize, pts: &[Vec2], radius: f64, value: f64) {
        let grid = self.grid;
        let w = grid.width;
        let plane = self.plane(ch);
        let segs: Vec<(Vec2, Vec2)> = if pts.len() == 1 {
            vec![(pts[0], pts[0])]
        } else {
            pts.windows(2).map(|s| (s[0], s[1])).collect()
        };
        for (a, b) in segs {
            let lo = Vec2::new(a.x.min(b.x) - radius, a.y.min(b.y) - radius);
            let hi = Vec2::new(a.x.max(b.x) + radius, a.y.max(b.y) + radius);
            if let Some((r0, r1, c0, c1)) = grid.cells_in_box(lo, hi) {
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        if segment_distance(grid.cell_center(r, c), a, b).0 <= radius {
                            plane[r * w + c] = value;
                        }
                    }
                }
            }
        }
    }

    fn fill_where(&mut self, lo: Vec2, hi: Vec2, mut inside: impl FnMut(Vec2) -> bool, mut put: impl FnMut(&mut Self, usize)) {
        let grid = self.grid;
        if let Some((r0, r1, c0, c1)) = grid.cells_in_box(lo, hi) {
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if inside(grid.cell_center(r, c)) {
                        put(self, r * grid.width + c);
                    }
                }
            }
        }
    }
}

fn bbox(pts: &[Vec2]) -> (Vec2, Vec2) {
    pts.iter().fold(
        (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), p| (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y))),
    )
}

/// Renders the ground-truth world around `ego_id` into the map-view feature.
///
/// Channel layout: 0 road, 1 lane lines, 2 unavailable area, 3 occupancy of
/// other vehicles, 4–5 velocity (ego frame, ÷15 m/s) and 6–7 sin/cos of the
/// relative heading of any vehicle (ego included) on its footprint, 8 ego
/// footprint, 9 route (within 2 m), 10 active stop zones, remaining zero.
pub fn rasterize(snapshot: &WorldSnapshot, ego_id: u32, grid: &GridSpec) -> Result<MapViewFeature> {
    if grid.channels < USED_CHANNELS {
        return Err(CoreError::Config(format!(
            "map-view needs at least {USED_CHANNELS} channels, got {}",
            grid.channels
        )));
    }
    let ego = snapshot
        .vehicles
        .iter()
        .find(|v| v.id == ego_id)
        .ok_or(CoreError::MissingVehicle(ego_id))?;
    let frame = ego.pose();
    let n = grid.height * grid.width;
    let mut data = vec![0.0; grid.channels * n];
    let mut canvas = Canvas { grid: *grid, data: &mut data };
    let local = |pts: &[Vec2]| pts.iter().map(|p| frame.to_local(*p)).collect::<Vec<_>>();

    for lane in &snapshot.map.lanes {
        canvas.stroke(CH_ROAD, &local(&lane.centerline), lane.width / 2.0, 1.0);
    }
    for line in snapshot.map.lane_lines() {
        canvas.stroke(CH_LANE_LINE, &local(&line), 0.5 * grid.cell, 1.0);
    }
    for i in 0..n {
        canvas.data[CH_UNAVAILABLE * n + i] = 1.0 - canvas.data[CH_ROAD * n + i];
    }

    for v in &snapshot.vehicles {
        let rel = frame.relative(&v.pose());
        let corners = rect_corners(&rel, v.length, v.width);
        let (lo, hi) = bbox(&corners);
        let vel = Vec2::from_angle(rel.heading) * (v.speed / MAX_SPEED);
        let (s, c) = wrap_angle(rel.heading).sin_cos();
        let is_ego = v.id == ego_id;
        canvas.fill_where(
            lo,
            hi,
            |p| point_in_rect(p, &rel, v.length, v.width),
            |cv, k| {
                cv.data[if is_ego { CH_EGO } else { CH_OCCUPANCY } * n + k] = 1.0;
                cv.data[CH_VX * n + k] = vel.x;
                cv.data[CH_VY * n + k] = vel.y;
                cv.data[CH_SIN * n + k] = s;
                cv.data[CH_COS * n + k] = c;
            },
        );
    }

    if !snapshot.ego_route.is_empty() {
        canvas.stroke(CH_ROUTE, &local(&snapshot.ego_route), 2.0, 1.0);
    }
    for zone in snapshot.stop_zones.iter().filter(|z| z.active) {
        let poly = local(&zone.polygon);
        let (lo, hi) = bbox(&poly);
        canvas.fill_where(lo, hi, |p| point_in_polygon(p, &poly), |cv, k| cv.data[CH_STOP * n + k] = 1.0);
    }

    Ok(MapViewFeature {
        values: Tensor::new(vec![grid.channels, grid.height, grid.width], data)?,
        grid: *grid,
    })
}

/// Fractional F pixel coordinates of every crop cell for a vehicle whose pose
/// relative to the ego is `rel`.
pub fn crop_coords(grid: &GridSpec, crop: &CropSpec, rel: &Pose) -> Result<Vec<[f64; 2]>> {
    if !rel.is_finite() {
        return Err(CoreError::NonFinite("crop pose".into()));
    }
    let mut out = Vec::with_capacity(crop.size * crop.size);
    for i in 0..crop.size {
        for j in 0..crop.size {
            out.push(grid.to_pixel(rel.to_world(crop.cell_center(i, j))));
        }
    }
    Ok(out)
}

/// Differentiable rotated-RoI crop of `f: [C, H, W]` → `[C, size, size]`.
pub fn crop_rotated_roi(g: &mut Graph<'_>, f: Var, grid: &GridSpec, crop: &CropSpec, rel: &Pose) -> Result<Var> {
    let coords = crop_coords(grid, crop, rel)?;
    Ok(g.grid_sample(f, coords, crop.size, crop.size)?)
}

/// `[C, C, 1, 1]` weights that re-express the ego-frame velocity and heading
/// channels of a crop in the frame of a vehicle at relative heading
/// `heading`; all other channels pass through unchanged.
pub fn frame_rotation(channels: usize, heading: f64) -> Tensor {
    let (s, c) = heading.sin_cos();
    let mut w = Tensor::from_fn(&[channels, channels, 1, 1], |i| {
        if i / channels == i % channels {
            1.0
        } else {
            0.0
        }
    });
    let d = w.data_mut();
    let mut set = |o: usize, i: usize, v: f64| d[o * channels + i] = v;
    // v' = R(−θ)·v
    set(CH_VX, CH_VX, c);
    set(CH_VX, CH_VY, s);
    set(CH_VY, CH_VX, -s);
    set(CH_VY, CH_VY, c);
    // (sin, cos)(φ − θ)
    set(CH_SIN, CH_SIN, c);
    set(CH_SIN, CH_COS, -s);
    set(CH_COS, CH_COS, c);
    set(CH_COS, CH_SIN, s);
    w
}

/// Crop followed by [`frame_rotation`], so the crop reads as if rasterised
/// around the target vehicle.
pub fn crop_vehicle_frame(g: &mut Graph<'_>, f: Var, grid: &GridSpec, crop: &CropSpec, rel: &Pose) -> Result<Var> {
    let x = crop_rotated_roi(g, f, grid, crop, rel)?;
    if rel.heading == 0.0 {
        return Ok(x);
    }
    let ch = grid.channels;
    let w = g.constant(frame_rotation(ch, rel.heading));
    let x4 = g.reshape(x, &[1, ch, crop.size, crop.size])?;
    let y = g.conv2d(x4, w, None, jointdrive_numerics::Conv2dSpec::default())?;
    Ok(g.reshape(y, &[ch, crop.size, crop.size])?)
}
