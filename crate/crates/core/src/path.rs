use crate::error::{Error, Result};
use crate::model::LatentPoint;

/// A latent sequence `z_0, z_1, ..., z_T`.
///
/// `z_0` is a dummy predecessor with one step remaining, so `z_1` always
/// opens a fresh segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentPath {
    pub initial_state: usize,
    pub points: Vec<LatentPoint>,
}

impl LatentPath {
    pub fn new(initial_state: usize, points: Vec<LatentPoint>) -> Self {
        LatentPath {
            initial_state,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn initial(&self) -> LatentPoint {
        LatentPoint::new(self.initial_state, 1)
    }

    /// The predecessor of `points[i]`.
    pub fn predecessor(&self, i: usize) -> LatentPoint {
        if i == 0 {
            self.initial()
        } else {
            self.points[i - 1]
        }
    }

    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.points.iter().map(|z| z.state)
    }

    /// Number of segments that start within `1..=T`.
    pub fn segment_count(&self) -> usize {
        (0..self.points.len())
            .filter(|&i| self.predecessor(i).remaining == 1)
            .count()
    }

    /// Checks the countdown structure against `num_states` states.
    pub fn validate(&self, num_states: usize) -> Result<()> {
        if self.initial_state >= num_states {
            return Err(Error::InvalidPath(format!(
                "initial state {} out of range",
                self.initial_state + 1
            )));
        }
        for (i, z) in self.points.iter().enumerate() {
            let t = i + 1;
            if z.state >= num_states {
                return Err(Error::InvalidPath(format!(
                    "state {} out of range at t = {t}",
                    z.state + 1
                )));
            }
            if z.remaining == 0 {
                return Err(Error::InvalidPath(format!("zero duration at t = {t}")));
            }
            let prev = self.predecessor(i);
            if prev.remaining > 1 {
                if z.state != prev.state || z.remaining + 1 != prev.remaining {
                    return Err(Error::InvalidPath(format!(
                        "segment broken mid-way at t = {t}"
                    )));
                }
            } else if z.state == prev.state {
                return Err(Error::InvalidPath(format!("self-transition at t = {t}")));
            }
        }
        Ok(())
    }
}

/// A latent path together with its observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub latent: LatentPath,
    pub observations: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(x0: usize, xs: &[usize], ds: &[usize]) -> LatentPath {
        LatentPath::new(
            x0,
            xs.iter()
                .zip(ds)
                .map(|(&x, &d)| LatentPoint::new(x, d))
                .collect(),
        )
    }

    #[test]
    fn accepts_valid_structure() {
        let p = path(1, &[0, 0, 0, 1, 1], &[3, 2, 1, 4, 3]);
        p.validate(2).unwrap();
        assert_eq!(p.segment_count(), 2);
    }

    #[test]
    fn rejects_broken_countdown() {
        assert!(path(1, &[0, 0], &[3, 1]).validate(2).is_err());
        assert!(path(1, &[0, 1], &[2, 1]).validate(2).is_err());
    }

    #[test]
    fn rejects_self_transition() {
        assert!(path(0, &[0], &[1]).validate(2).is_err());
        assert!(path(1, &[0, 0], &[1, 1]).validate(2).is_err());
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(path(2, &[0], &[1]).validate(2).is_err());
        assert!(path(1, &[0], &[0]).validate(2).is_err());
    }
}
