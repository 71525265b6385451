use serde::{Deserialize, Serialize};

use crate::geometry::{Polyline, Vec2};

pub const LANE_WIDTH: f64 = 3.5;

/// One directed lane of the road graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: usize,
    /// Centerline in travel direction.
    pub centerline: Vec<Vec2>,
    pub width: f64,
    /// Lanes reachable from this lane's end.
    pub successors: Vec<usize>,
    /// Position among parallel same-direction lanes, 0 = rightmost.
    pub lane_index: u32,
    /// True for connector lanes inside a junction (drawn without lane lines).
    pub junction: bool,
}

impl Lane {
    pub fn polyline(&self) -> Polyline {
        Polyline::new(self.centerline.clone())
    }

    /// Left and right boundary polylines.
    pub fn boundaries(&self) -> [Vec<Vec2>; 2] {
        let n = self.centerline.len();
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for i in 0..n {
            let a = self.centerline[i.saturating_sub(1)];
            let b = self.centerline[(i + 1).min(n - 1)];
            let dir = b - a;
            let normal = dir.perp() * (1.0 / dir.norm().max(1e-12));
            left.push(self.centerline[i] + normal * (self.width / 2.0));
            right.push(self.centerline[i] - normal * (self.width / 2.0));
        }
        [left, right]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoadMap {
    pub lanes: Vec<Lane>,
}

impl RoadMap {
    /// Whether `p` lies on the drivable surface of any lane.
    pub fn on_road(&self, p: Vec2) -> bool {
        self.lanes
            .iter()
            .any(|l| l.polyline().distance(p) <= l.width / 2.0)
    }

    /// Distance from `p` to the nearest lane centerline, less that lane's half width.
    pub fn road_clearance(&self, p: Vec2) -> f64 {
        self.lanes
            .iter()
            .map(|l| l.polyline().distance(p) - l.width / 2.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Boundary polylines of all non-junction lanes.
    pub fn lane_lines(&self) -> Vec<Vec<Vec2>> {
        self.lanes
            .iter()
            .filter(|l| !l.junction)
            .flat_map(|l| l.boundaries())
            .collect()
    }

    pub fn lane(&self, id: usize) -> Option<&Lane> {
        self.lanes.get(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_lane_boundaries() {
        let lane = Lane {
            id: 0,
            centerline: vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)],
            width: 3.5,
            successors: vec![],
            lane_index: 0,
            junction: false,
        };
        let [l, r] = lane.boundaries();
        assert!((l[0].y - 1.75).abs() < 1e-12 && (r[1].y + 1.75).abs() < 1e-12);
        let map = RoadMap { lanes: vec![lane] };
        assert!(map.on_road(Vec2::new(5.0, 1.7)));
        assert!(!map.on_road(Vec2::new(5.0, 1.8)));
    }
}
