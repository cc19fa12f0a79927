//! Planar room geometry: walls, the exit strip and simple regions.

use serde::{Deserialize, Serialize};

/// Depth of the exit strip measured from its wall, in meters.
pub const EXIT_DEPTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Wall {
    N,
    S,
    E,
    W,
}

/// Axis-aligned rectangle, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }

    /// Euclidean distance from a point to the rectangle (0 inside).
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        let dx = (self.min_x - x).max(0.0).max(x - self.max_x);
        let dy = (self.min_y - y).max(0.0).max(y - self.max_y);
        dx.hypot(dy)
    }

    /// Whether a disc intersects the rectangle (touching counts).
    pub fn intersects_disc(&self, cx: f64, cy: f64, radius: f64) -> bool {
        self.distance_to(cx, cy) <= radius
    }
}

/// A single rectangular room with one exit strip on one wall.
///
/// Coordinates run from `(0, 0)` to `(width, depth)`. `exit_center_offset` is
/// measured along the exit wall from its low end (x for N/S walls, y for E/W).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomGeometry {
    pub width: f64,
    pub depth: f64,
    pub exit_wall: Wall,
    pub exit_center_offset: f64,
    pub exit_half_width: f64,
}

impl RoomGeometry {
    /// Room with the exit centred on `wall`, 2 m wide.
    pub fn new(width: f64, depth: f64, wall: Wall) -> Self {
        let along = match wall {
            Wall::N | Wall::S => width,
            Wall::E | Wall::W => depth,
        };
        RoomGeometry {
            width,
            depth,
            exit_wall: wall,
            exit_center_offset: 0.5 * along,
            exit_half_width: 1.0,
        }
    }

    pub fn wall_length(&self, wall: Wall) -> f64 {
        match wall {
            Wall::N | Wall::S => self.width,
            Wall::E | Wall::W => self.depth,
        }
    }

    pub fn exit_region(&self) -> Rect {
        let lo = self.exit_center_offset - self.exit_half_width;
        let hi = self.exit_center_offset + self.exit_half_width;
        match self.exit_wall {
            Wall::N => Rect {
                min_x: lo,
                max_x: hi,
                min_y: self.depth - EXIT_DEPTH,
                max_y: self.depth,
            },
            Wall::S => Rect {
                min_x: lo,
                max_x: hi,
                min_y: 0.0,
                max_y: EXIT_DEPTH,
            },
            Wall::E => Rect {
                min_x: self.width - EXIT_DEPTH,
                max_x: self.width,
                min_y: lo,
                max_y: hi,
            },
            Wall::W => Rect {
                min_x: 0.0,
                max_x: EXIT_DEPTH,
                min_y: lo,
                max_y: hi,
            },
        }
    }

    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(0.0, self.width), y.clamp(0.0, self.depth))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && x <= self.width && y >= 0.0 && y <= self.depth
    }

    /// Structural problems with the room itself, as `(field, message)` pairs.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.width.is_finite() && self.width > 2.0) {
            out.push(("room.width", format!("must exceed 2 m, got {}", self.width)));
        }
        if !(self.depth.is_finite() && self.depth > 2.0) {
            out.push(("room.depth", format!("must exceed 2 m, got {}", self.depth)));
        }
        if !(self.exit_half_width.is_finite() && self.exit_half_width > 0.0) {
            out.push((
                "room.exit_half_width",
                format!("must be positive, got {}", self.exit_half_width),
            ));
        }
        let len = self.wall_length(self.exit_wall);
        let lo = self.exit_center_offset - self.exit_half_width;
        let hi = self.exit_center_offset + self.exit_half_width;
        if !(lo >= 0.0 && hi <= len) {
            out.push((
                "room.exit_center_offset",
                format!("exit strip [{lo}, {hi}] does not lie on a wall of length {len}"),
            ));
        }
        out
    }
}
