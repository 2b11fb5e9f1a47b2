//! Feature and verification diagnostics on gridded fields.

mod cyclone;
mod front;
mod verify;

pub use cyclone::{
    argmin, arithmetic_mean, count_minima, detect_cyclone, feature_midpoint, midpoint, pressure_minima,
    smooth3x3, CenterQuality, CycloneDiagnostics, PressureMinimum, DEFAULT_DEPTH_THRESHOLD,
    DEFAULT_SEARCH_RADIUS_KM,
};
pub use front::{detect_front, SHEAR_THRESHOLD};
pub use verify::{
    angle_diff, random_stations, rmse, synthesize_obs, verify_against_stations, wind_fields, wind_speed_dir,
    ObsSet, Quantity, VerificationResult, VerificationRow, WindObs, CALM_THRESHOLD,
};
