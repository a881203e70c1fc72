//! Spherical geometry kernel.
//!
//! Positions are unit 3-vectors; (ra, dec) degrees appear only at I/O
//! boundaries. Regions follow the union-of-convexes representation: a
//! [`Region`] is a union of [`Convex`]es, each the intersection of
//! spherical [`HalfSpace`]s (caps). Boolean intersection, angular
//! buffering/erosion, emptiness and point-in-region tests are provided;
//! all values are immutable after construction and all operations are
//! pure functions.

mod position;
mod region;

pub use position::{angular_distance, SkyPosition};
pub use region::{uniform_sphere_sample, Convex, Emptiness, HalfSpace, Region};

use thiserror::Error;

/// Tolerance applied to every half-space dot-product comparison.
pub const EPS_GEOM: f64 = 1e-12;

/// Arcseconds per radian.
pub const ARCSEC_PER_RAD: f64 = 3600.0 * 180.0 / std::f64::consts::PI;

/// Largest possible angular separation (half a turn), in arcseconds.
pub const MAX_SEPARATION_ARCSEC: f64 = 648_000.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("declination {0} degrees outside [-90, 90]")]
    DecOutOfRange(f64),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("vector norm {0} too small to normalize")]
    ZeroVector(f64),
    #[error("half-space offset {0} outside [-1, 1]")]
    OffsetOutOfRange(f64),
    #[error("cap radius {0} arcsec outside [0, 648000]")]
    RadiusOutOfRange(f64),
    #[error("negative fuzz {0} arcsec")]
    NegativeFuzz(f64),
    #[error("bounding circle requested for an empty convex")]
    EmptyConvex,
}
