//! Zonal day-ahead electricity market clearing and strategic bidding analysis.
//!
//! The crate clears one-hour zonal markets as a strictly convex QP, computes
//! approximate global Nash equilibria of linear supply-function bids under a
//! worst-case-robust strategy restriction, calibrates cost scales to observed
//! prices and classifies hours as truthful or strategic.

pub mod analytic;
pub mod calibration;
pub mod cost;
pub mod detection;
pub mod io;
pub mod market;
pub mod nash;
pub mod qp;
pub mod rss;
