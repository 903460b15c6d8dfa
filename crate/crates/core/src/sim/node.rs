use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::trust::DeviceId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Mobility {
    Stationary,
    RandomWaypoint {
        /// Meters per tick.
        speed: f64,
        target: Option<Point>,
    },
}

impl Mobility {
    pub fn speed(&self) -> f64 {
        match self {
            Mobility::Stationary => 0.0,
            Mobility::RandomWaypoint { speed, .. } => *speed,
        }
    }
}

/// A simulated device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceNode {
    pub id: DeviceId,
    pub position: Point,
    pub radio_range: f64,
    pub has_internet: bool,
    pub airplane_mode: bool,
    pub interests: BTreeSet<String>,
    pub apps: BTreeSet<String>,
    pub mobility: Mobility,
}

impl DeviceNode {
    pub fn new(id: u64, x: f64, y: f64, radio_range: f64) -> Self {
        DeviceNode {
            id: DeviceId(id),
            position: Point::new(x, y),
            radio_range,
            has_internet: false,
            airplane_mode: false,
            interests: BTreeSet::new(),
            apps: BTreeSet::new(),
            mobility: Mobility::Stationary,
        }
    }

    pub fn with_internet(mut self) -> Self {
        self.has_internet = true;
        self
    }

    pub fn with_interests<I, S>(mut self, interests: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.interests = interests.into_iter().map(Into::into).collect();
        self
    }

    /// Internet access as seen by session classification; airplane mode cuts it.
    pub fn online(&self) -> bool {
        self.has_internet && !self.airplane_mode
    }

    pub fn distance_to(&self, other: &DeviceNode) -> f64 {
        self.position.distance(&other.position)
    }

    /// `distance_to(other) <= r`, skipping the exact distance for pairs
    /// that are clearly apart.
    pub fn within(&self, other: &DeviceNode, r: f64) -> bool {
        let dx = self.position.x - other.position.x;
        let dy = self.position.y - other.position.y;
        let slack = r * (1.0 + 1e-9);
        if dx.abs() > slack || dy.abs() > slack || dx * dx + dy * dy > slack * slack {
            return false;
        }
        self.distance_to(other) <= r
    }
}
