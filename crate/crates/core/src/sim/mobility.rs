use std::collections::BTreeMap;
use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DeviceNode, Mobility, Point};
use crate::trust::{DeviceId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Arena {
            width: 300.0,
            height: 300.0,
        }
    }
}

impl Arena {
    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point::new(rng.gen::<f64>() * self.width, rng.gen::<f64>() * self.height)
    }
}

/// Advance one tick of random-waypoint motion. A node without a waypoint, or
/// one that reaches it this tick, draws a new one uniformly from the arena.
pub fn step_mobility<R: Rng + ?Sized>(node: &mut DeviceNode, arena: &Arena, rng: &mut R) {
    let Mobility::RandomWaypoint { speed, target } = &mut node.mobility else {
        return;
    };
    if *speed <= 0.0 {
        return;
    }
    let goal = *target.get_or_insert_with(|| arena.random_point(rng));
    let d = node.position.distance(&goal);
    if d <= *speed {
        node.position = goal;
        *target = Some(arena.random_point(rng));
    } else {
        let f = *speed / d;
        node.position = arena.clamp(Point::new(
            node.position.x + (goal.x - node.position.x) * f,
            node.position.y + (goal.y - node.position.y) * f,
        ));
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceLoadError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: ticks must be non-decreasing")]
    Unordered { row: usize },
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    tick: Tick,
    device_id: u64,
    x: f64,
    y: f64,
}

/// Recorded positions that override the mobility model, from a
/// `tick,device_id,x,y` CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MobilityTrace {
    positions: BTreeMap<Tick, Vec<(DeviceId, Point)>>,
}

impl MobilityTrace {
    pub fn from_csv(reader: impl Read) -> Result<Self, TraceLoadError> {
        let mut positions: BTreeMap<Tick, Vec<(DeviceId, Point)>> = BTreeMap::new();
        let mut last = 0;
        for (i, row) in csv::Reader::from_reader(reader).deserialize().enumerate() {
            let row: TraceRow = row?;
            if row.tick < last {
                return Err(TraceLoadError::Unordered { row: i + 1 });
            }
            last = row.tick;
            positions
                .entry(row.tick)
                .or_default()
                .push((DeviceId(row.device_id), Point::new(row.x, row.y)));
        }
        Ok(MobilityTrace { positions })
    }

    pub fn at(&self, tick: Tick) -> &[(DeviceId, Point)] {
        self.positions.get(&tick).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}
