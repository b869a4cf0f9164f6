//! Bounded convex domains with membership, Euclidean projection onto the
//! closure, and the unit inward normal at boundary points.
//!
//! The built-ins (interval, ball) are convex, so projection is single-valued
//! and the displacement direction agrees with the inward normal at the
//! projected point, which is exactly what the reflection scheme reads off.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the signed distance used to classify boundary points.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Classification of a point relative to the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Location {
    Interior,
    Boundary,
    Outside,
}

/// A bounded convex domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Interval { lo: f64, hi: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Domain {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config(format!(
                "interval needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Domain::Interval { lo, hi })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::Config("ball center must have dimension >= 1".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::Config(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(Domain::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Ball { center, .. } => center.len(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Config(format!(
                "point of dimension {} in domain of dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Signed distance to the boundary, positive inside.
    pub fn signed_distance(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            Domain::Interval { lo, hi } => (x[0] - lo).min(hi - x[0]),
            Domain::Ball { center, radius } => {
                let r = dist(x, center);
                radius - r
            }
        })
    }

    /// Membership with boundary tolerance [`BOUNDARY_TOL`].
    pub fn contains(&self, x: &[f64]) -> Result<Location> {
        let d = self.signed_distance(x)?;
        Ok(if d > BOUNDARY_TOL {
            Location::Interior
        } else if d < -BOUNDARY_TOL {
            Location::Outside
        } else {
            Location::Boundary
        })
    }

    /// Euclidean projection onto the closure together with the displacement.
    ///
    /// The displacement is zero exactly when the point is already in the
    /// closure; otherwise the push is along the inward normal at the
    /// projected point.
    pub fn project(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(x)?;
        Ok(match self {
            Domain::Interval { lo, hi } => {
                let p = x[0].clamp(*lo, *hi);
                (vec![p], (x[0] - p).abs())
            }
            Domain::Ball { center, radius } => {
                let r = dist(x, center);
                // Points within the boundary tolerance count as members, so
                // projecting a projected point is the identity.
                if r <= radius + BOUNDARY_TOL {
                    (x.to_vec(), 0.0)
                } else {
                    let scale = radius / r;
                    let p: Vec<f64> = x
                        .iter()
                        .zip(center.iter())
                        .map(|(xi, ci)| ci + scale * (xi - ci))
                        .collect();
                    (p, r - radius)
                }
            }
        })
    }

    /// Unit normal pointing towards the interior at a boundary point.
    pub fn inward_normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.contains(x)? != Location::Boundary {
            return Err(Error::Precondition(format!(
                "inward_normal needs a boundary point, got {x:?}"
            )));
        }
        Ok(match self {
            Domain::Interval { lo, hi } => {
                if (x[0] - lo).abs() <= (hi - x[0]).abs() {
                    vec![1.0]
                } else {
                    vec![-1.0]
                }
            }
            Domain::Ball { center, .. } => {
                let r = dist(x, center);
                x.iter()
                    .zip(center.iter())
                    .map(|(xi, ci)| (ci - xi) / r)
                    .collect()
            }
        })
    }

    /// Axis-aligned bounding box of the closure, used for sampling.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Interval { lo, hi } => (vec![*lo], vec![*hi]),
            Domain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
