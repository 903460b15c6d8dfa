use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DeviceNode;
use crate::trust::{DeviceId, InteractionKind, Tick};

/// A finished proximity interaction between two devices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub a: DeviceId,
    pub b: DeviceId,
    pub start: Tick,
    pub duration: Tick,
    pub mean_distance: f64,
    pub kind: InteractionKind,
}

impl ContactRecord {
    /// Orders the pair so that `a < b`.
    pub fn new(
        a: DeviceId,
        b: DeviceId,
        start: Tick,
        duration: Tick,
        mean_distance: f64,
        kind: InteractionKind,
    ) -> Self {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        ContactRecord {
            a,
            b,
            start,
            duration,
            mean_distance,
            kind,
        }
    }

    /// Last tick the pair was in contact.
    pub fn last_tick(&self) -> Tick {
        self.start + self.duration.max(1) - 1
    }

    /// Whether the contact shares at least one tick with `[lo, hi]`.
    pub fn overlaps(&self, lo: Tick, hi: Tick) -> bool {
        self.start <= hi && self.last_tick() >= lo
    }

    pub fn involves(&self, id: DeviceId) -> bool {
        self.a == id || self.b == id
    }

    pub fn other(&self, id: DeviceId) -> Option<DeviceId> {
        if self.a == id {
            Some(self.b)
        } else if self.b == id {
            Some(self.a)
        } else {
            None
        }
    }
}

/// A pair within contact radius during the current tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveContact {
    pub a: DeviceId,
    pub b: DeviceId,
    pub distance: f64,
}

#[derive(Clone, Debug)]
struct OpenContact {
    start: Tick,
    ticks: Tick,
    distance_sum: f64,
}

/// Turns per-tick proximity into contact records.
#[derive(Clone, Debug)]
pub struct ContactTracker {
    radius: f64,
    open: BTreeMap<(DeviceId, DeviceId), OpenContact>,
}

impl ContactTracker {
    pub fn new(radius: f64) -> Self {
        ContactTracker {
            radius,
            open: BTreeMap::new(),
        }
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    /// Open or extend contacts for pairs within the radius at `now` and close
    /// the ones that separated. Returns this tick's active pairs and the
    /// closed records, both in pair order.
    pub fn detect(&mut self, nodes: &[DeviceNode], now: Tick) -> (Vec<ActiveContact>, Vec<ContactRecord>) {
        let mut active = Vec::new();
        for (i, x) in nodes.iter().enumerate() {
            for y in &nodes[i + 1..] {
                if x.within(y, self.radius) {
                    let d = x.distance_to(y);
                    let (a, b) = if x.id < y.id { (x.id, y.id) } else { (y.id, x.id) };
                    active.push(ActiveContact { a, b, distance: d });
                }
            }
        }
        active.sort_by_key(|c| (c.a, c.b));

        let mut closed = Vec::new();
        let mut still_open = BTreeMap::new();
        let mut previous = std::mem::take(&mut self.open);
        for c in &active {
            let entry = match previous.remove(&(c.a, c.b)) {
                Some(mut o) => {
                    o.ticks += 1;
                    o.distance_sum += c.distance;
                    o
                }
                None => OpenContact {
                    start: now,
                    ticks: 1,
                    distance_sum: c.distance,
                },
            };
            still_open.insert((c.a, c.b), entry);
        }
        for ((a, b), o) in previous {
            closed.push(close(a, b, o));
        }
        self.open = still_open;
        (active, closed)
    }

    /// Close every open contact, e.g. at the end of a run.
    pub fn flush(&mut self) -> Vec<ContactRecord> {
        std::mem::take(&mut self.open)
            .into_iter()
            .map(|((a, b), o)| close(a, b, o))
            .collect()
    }
}

fn close(a: DeviceId, b: DeviceId, o: OpenContact) -> ContactRecord {
    ContactRecord::new(
        a,
        b,
        o.start,
        o.ticks,
        o.distance_sum / o.ticks as f64,
        InteractionKind::CoPresence,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_is_canonical() {
        let c = ContactRecord::new(DeviceId(9), DeviceId(2), 5, 3, 1.0, InteractionKind::Wave);
        assert_eq!((c.a, c.b), (DeviceId(2), DeviceId(9)));
        assert_eq!(c.other(DeviceId(2)), Some(DeviceId(9)));
        assert_eq!(c.other(DeviceId(4)), None);
        assert!(c.overlaps(7, 100));
        assert!(!c.overlaps(8, 100));
        assert!(c.overlaps(0, 5));
        assert!(!c.overlaps(0, 4));
    }

    #[test]
    fn ten_tick_contact_then_separation() {
        let mut nodes = vec![DeviceNode::new(1, 0.0, 0.0, 10.0), DeviceNode::new(2, 3.0, 0.0, 10.0)];
        let mut tracker = ContactTracker::new(5.0);
        for t in 0..10 {
            let (active, closed) = tracker.detect(&nodes, t);
            assert_eq!(active.len(), 1);
            assert!(closed.is_empty());
        }
        nodes[1].position.x = 50.0;
        let (active, closed) = tracker.detect(&nodes, 10);
        assert!(active.is_empty());
        assert_eq!(closed.len(), 1);
        assert_eq!(closed[0].start, 0);
        assert_eq!(closed[0].duration, 10);
        assert!((closed[0].mean_distance - 3.0).abs() < 1e-12);
    }

    #[test]
    fn never_close_means_no_record() {
        let nodes = vec![DeviceNode::new(1, 0.0, 0.0, 10.0), DeviceNode::new(2, 30.0, 0.0, 10.0)];
        let mut tracker = ContactTracker::new(5.0);
        for t in 0..20 {
            let (active, closed) = tracker.detect(&nodes, t);
            assert!(active.is_empty() && closed.is_empty());
        }
        assert!(tracker.flush().is_empty());
    }

    #[test]
    fn single_tick_contact() {
        let mut nodes = vec![DeviceNode::new(1, 0.0, 0.0, 10.0), DeviceNode::new(2, 1.0, 0.0, 10.0)];
        let mut tracker = ContactTracker::new(5.0);
        tracker.detect(&nodes, 0);
        nodes[1].position.x = 40.0;
        let (_, closed) = tracker.detect(&nodes, 1);
        assert_eq!(closed[0].duration, 1);
    }

    #[test]
    fn mean_distance_is_running_average() {
        let mut nodes = vec![DeviceNode::new(1, 0.0, 0.0, 10.0), DeviceNode::new(2, 1.0, 0.0, 10.0)];
        let mut tracker = ContactTracker::new(5.0);
        tracker.detect(&nodes, 0);
        nodes[1].position.x = 3.0;
        tracker.detect(&nodes, 1);
        let rec = tracker.flush();
        assert_eq!(rec[0].duration, 2);
        assert!((rec[0].mean_distance - 2.0).abs() < 1e-12);
    }
}
