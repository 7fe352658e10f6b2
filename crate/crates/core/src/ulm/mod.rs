//! Localization microscopy: clutter filtering, detection, tracking, density
//! rendering and aberration-map assembly.

mod density;
mod detect;
mod smooth;
mod svd;
mod track;

pub use density::{accumulate_density, rasterize_track, saturation_curve, DensityMap};
pub use detect::{correlation_map, detect_microbubbles, paraboloid_offset, PsfTemplate};
pub use smooth::{dct_matrix, interpolate_aberration_map, AberrationMap, DctSmoother};
pub use svd::{svd_clutter_filter, svd_filter_channels, svd_split};
pub use track::{hungarian, link_costs, link_tracks, write_tracks_csv, Detection, LinkConfig, Track, TrackPoint};
