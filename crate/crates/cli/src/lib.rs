//! Command line and HTTP front end of the motion toolkit.

pub mod cli;
pub mod io;
pub mod service;
