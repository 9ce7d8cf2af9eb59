//! Stage machine and trial outcomes.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageId {
    Sentry,
    Approach,
    Insert,
    Collect,
    Extract,
    Aborted,
    Done,
}

impl StageId {
    /// Legal successor stages.
    pub fn can_transition(self, to: StageId) -> bool {
        use StageId::*;
        matches!(
            (self, to),
            (Sentry, Approach)
                | (Approach, Insert)
                | (Insert, Collect)
                | (Collect, Extract)
                | (Extract, Done)
                | (Approach | Insert | Collect, Aborted)
                | (Aborted, Extract)
        )
    }

    pub fn is_contact(self) -> bool {
        matches!(self, StageId::Insert | StageId::Collect)
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    ReachedNP,
    Stuck,
    Overload,
    Premature,
    WedgeAbort,
    ManualAbort,
    /// The approach never converged on the nostril.
    NoApproach,
}

impl Outcome {
    pub fn reached(self) -> bool {
        self == Outcome::ReachedNP
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub stage: StageId,
    pub t: f64,
}

#[cfg(test)]
mod tests {
    use super::StageId::*;

    #[test]
    fn happy_path_is_legal() {
        let path = [Sentry, Approach, Insert, Collect, Extract, Done];
        assert!(path.windows(2).all(|w| w[0].can_transition(w[1])));
    }

    #[test]
    fn cannot_skip_collect() {
        assert!(!Insert.can_transition(Done));
        assert!(!Sentry.can_transition(Insert));
        assert!(!Aborted.can_transition(Done));
        assert!(!Done.can_transition(Sentry));
        assert!(!Extract.can_transition(Aborted));
        for s in [Approach, Insert, Collect] {
            assert!(s.can_transition(Aborted));
        }
        assert!(Aborted.can_transition(Extract));
    }
}
