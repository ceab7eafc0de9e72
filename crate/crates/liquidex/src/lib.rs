pub mod benchmark;
pub mod boundary;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod execution;
pub mod params;
pub mod value;
