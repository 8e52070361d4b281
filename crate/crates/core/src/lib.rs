//! Risk-bounded motion planning for stochastic systems with moment-based
//! uncertainty tubes, risk contours and sum-of-squares safety certificates.

pub mod bench;
pub mod ccrrt;
pub mod contours;
pub mod dynamics;
pub mod planner;
pub mod poly;
pub mod quadrature;
pub mod scenario;
pub mod sdp;
pub mod sos;
pub mod tubes;
pub mod uncertainty;
