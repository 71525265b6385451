use serde::{Deserialize, Serialize};

/// High-level driving command selecting an ego decoder branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighLevelBehavior {
    GoStraight,
    TurnLeft,
    TurnRight,
    Following,
    ChangeLeft,
    ChangeRight,
}

impl HighLevelBehavior {
    pub const ALL: [HighLevelBehavior; 6] = [
        HighLevelBehavior::GoStraight,
        HighLevelBehavior::TurnLeft,
        HighLevelBehavior::TurnRight,
        HighLevelBehavior::Following,
        HighLevelBehavior::ChangeLeft,
        HighLevelBehavior::ChangeRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            HighLevelBehavior::GoStraight => "go_straight",
            HighLevelBehavior::TurnLeft => "turn_left",
            HighLevelBehavior::TurnRight => "turn_right",
            HighLevelBehavior::Following => "following",
            HighLevelBehavior::ChangeLeft => "change_left",
            HighLevelBehavior::ChangeRight => "change_right",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_order() {
        for (i, b) in HighLevelBehavior::ALL.iter().enumerate() {
            assert_eq!(b.index(), i);
            assert_eq!(HighLevelBehavior::from_index(i), Some(*b));
        }
        assert_eq!(HighLevelBehavior::from_index(6), None);
        assert_eq!(HighLevelBehavior::TurnLeft.name(), "turn_left");
    }
}
