//! StyleSpace analysis toolkit.

pub mod error;
pub mod attr_detect;
pub mod dci;
pub mod exec;
pub mod generator;
pub mod inversion;
pub mod io;
pub mod local_detect;
pub mod manip_ad;
pub mod numerics;
pub mod pipeline;
pub mod testbed;

pub use error::{Error, Result};
