//! Safety barrier certificates, simulation and verification for small
//! differential-drive robot swarms.

pub mod barrier;
pub mod controllers;
pub mod model;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod sysid;
pub mod verification;
