//! Vehicle localization in a pre-built 3-D landmark map.
//!
//! Two interchangeable localizers operate on the same map geometry:
//!
//! * [`semantic`] — a bootstrap particle filter that matches densely
//!   segmented camera images against per-landmark class distributions.
//! * [`sift`] — a reference UKF that matches sparse descriptor features
//!   with a Lowe-ratio nearest-neighbour search and 3-point RANSAC.
//!
//! Supporting modules: [`geometry`] (poses, camera projection, visibility
//! wedges), [`map`] (landmark map model and its compact binary format),
//! [`motion`] (odometry-driven process model and odometry simulation),
//! [`sim`] (synthetic world generation and rendering) and [`io`]
//! (dataset file formats).

pub mod geometry;
pub mod io;
pub mod map;
pub mod motion;
pub mod semantic;
pub mod sift;
pub mod sim;
