use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Intra,
    /// Predicted from two decoded references, `left < target < right`.
    Bidirectional { left: usize, right: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodingUnit {
    pub target: usize,
    pub kind: UnitKind,
}

/// Coding order of one group of pictures (frames `0..=gop_size`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GopStructure {
    pub gop_size: usize,
    /// Frame 0 is the previous group's last frame and is not coded again.
    pub shared_key: bool,
    pub units: Vec<CodingUnit>,
}

/// Keys first (0, then N), then midpoints level by level.
pub fn coding_schedule(gop_size: usize) -> Result<GopStructure> {
    if gop_size == 0 || !gop_size.is_power_of_two() {
        return Err(Error::config(format!("GOP size {gop_size} is not a power of two")));
    }
    let mut units = vec![
        CodingUnit { target: 0, kind: UnitKind::Intra },
        CodingUnit { target: gop_size, kind: UnitKind::Intra },
    ];
    let mut queue = VecDeque::from([(0, gop_size)]);
    while let Some((left, right)) = queue.pop_front() {
        if right - left < 2 {
            continue;
        }
        let mid = (left + right) / 2;
        units.push(CodingUnit { target: mid, kind: UnitKind::Bidirectional { left, right } });
        queue.push_back((left, mid));
        queue.push_back((mid, right));
    }
    Ok(GopStructure { gop_size, shared_key: false, units })
}

impl GopStructure {
    /// A lone key frame, for single-frame sequences.
    pub fn key_only() -> Self {
        Self { gop_size: 0, shared_key: false, units: vec![CodingUnit { target: 0, kind: UnitKind::Intra }] }
    }

    /// Schedule for a group whose frame 0 is already decoded.
    pub fn continuation(gop_size: usize) -> Result<Self> {
        let mut s = coding_schedule(gop_size)?;
        s.units.remove(0);
        s.shared_key = true;
        Ok(s)
    }

    pub fn frame_count(&self) -> usize {
        self.gop_size + 1
    }

    /// Frames this schedule codes (excludes a shared key).
    pub fn coded_frames(&self) -> usize {
        self.units.len()
    }

    /// Replays the schedule and checks every reference is available and
    /// every frame is coded exactly once.
    pub fn validate(&self) -> Result<()> {
        let mut decoded = vec![false; self.frame_count()];
        if self.shared_key {
            decoded[0] = true;
        }
        for (i, u) in self.units.iter().enumerate() {
            let fail = |reason: String| Error::Decode { unit: i, reason };
            if u.target >= decoded.len() || decoded[u.target] {
                return Err(fail(format!("frame {} coded twice or out of range", u.target)));
            }
            if let UnitKind::Bidirectional { left, right } = u.kind {
                if !(left < u.target && u.target < right && u.target * 2 == left + right) {
                    return Err(fail(format!("frame {} is not the midpoint of ({left}, {right})", u.target)));
                }
                if !decoded[left] || !decoded[right] {
                    return Err(fail(format!("frame {} references an undecoded frame", u.target)));
                }
            }
            decoded[u.target] = true;
        }
        if decoded.iter().all(|&d| d) {
            Ok(())
        } else {
            Err(Error::config("schedule leaves frames uncoded"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(n: usize) -> Vec<usize> {
        coding_schedule(n).unwrap().units.iter().map(|u| u.target).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(order(4), vec![0, 4, 2, 1, 3]);
        let s = coding_schedule(4).unwrap();
        assert_eq!(s.units[3].kind, UnitKind::Bidirectional { left: 0, right: 2 });
        assert_eq!(order(1), vec![0, 1]);
        assert!(coding_schedule(1).unwrap().units.iter().all(|u| u.kind == UnitKind::Intra));
        assert!(coding_schedule(3).is_err());
        assert!(coding_schedule(0).is_err());
        assert_eq!(order(8), vec![0, 8, 4, 2, 6, 1, 3, 5, 7]);
    }

    #[test]
    fn schedules_replay_cleanly() {
        GopStructure::key_only().validate().unwrap();
        for n in [1, 2, 4, 8, 16, 32] {
            coding_schedule(n).unwrap().validate().unwrap();
            let c = GopStructure::continuation(n).unwrap();
            c.validate().unwrap();
            assert_eq!(c.coded_frames(), n);
        }
    }

    #[test]
    fn validate_catches_bad_orders() {
        let mut s = coding_schedule(4).unwrap();
        s.units.swap(2, 3);
        assert!(s.validate().is_err());
        let mut s = coding_schedule(4).unwrap();
        s.units.pop();
        assert!(s.validate().is_err());
    }
}
