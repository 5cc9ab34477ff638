use super::{DemoError, Demonstration, Gripper, Holder, Tool};

pub const PRIMITIVE_COUNT: usize = 5;

/// `(gripper A, gripper B, holder)` per motion primitive, in execution order.
const TABLE: [(Gripper, Gripper, Holder); PRIMITIVE_COUNT] = [
    (Gripper::Closed, Gripper::Open, Holder::WithA),
    (Gripper::Closed, Gripper::Closed, Holder::WithA),
    (Gripper::Open, Gripper::Closed, Holder::WithB),
    (Gripper::Closed, Gripper::Closed, Holder::WithB),
    (Gripper::Closed, Gripper::Open, Holder::WithA),
];

/// Tool that moves during each primitive; the other one stays put.
const MOVING: [Tool; PRIMITIVE_COUNT] = [Tool::A, Tool::B, Tool::B, Tool::A, Tool::A];

/// Gripper/holder state of primitive `label` (1-based).
pub fn table_row(label: u8) -> Option<(Gripper, Gripper, Holder)> {
    TABLE.get((label as usize).checked_sub(1)?).copied()
}

pub fn moving_tool(label: u8) -> Option<Tool> {
    MOVING.get((label as usize).checked_sub(1)?).copied()
}

/// Half-open sample span `[start, end)` carrying primitive `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub label: u8,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Splits a demonstration wherever the gripper/holder state changes and
/// labels each run with its motion primitive.
///
/// Labels must advance by exactly one per state change, so the repeated state
/// of primitives 1 and 5 is disambiguated by position.
pub fn segment(demo: &Demonstration) -> Result<Vec<Segment>, DemoError> {
    let samples = &demo.samples;
    if samples.is_empty() {
        return Err(DemoError::EmptySequence);
    }
    if let Some(i) = samples.iter().position(|s| !s.is_consistent()) {
        return Err(DemoError::InvalidStateSequence {
            index: i,
            reason: format!("holding tool has an open gripper: {:?}", samples[i].state()),
        });
    }

    let first = samples[0].state();
    let mut label = match TABLE.iter().position(|row| *row == first) {
        Some(p) => p as u8 + 1,
        None => {
            return Err(DemoError::InvalidStateSequence {
                index: 0,
                reason: format!("state {first:?} is not a motion primitive"),
            })
        }
    };

    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..samples.len() {
        let state = samples[i].state();
        if state == samples[i - 1].state() {
            continue;
        }
        out.push(Segment {
            label,
            start,
            end: i,
        });
        match table_row(label + 1) {
            Some(next) if next == state => {
                label += 1;
                start = i;
            }
            _ => {
                return Err(DemoError::InvalidStateSequence {
                    index: i,
                    reason: format!("state {state:?} cannot follow primitive {label}"),
                })
            }
        }
    }
    out.push(Segment {
        label,
        start,
        end: samples.len(),
    });
    Ok(out)
}
