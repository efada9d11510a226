//! Second-order dynamics of open quantum systems.

pub mod algebra;
pub mod bath;
pub mod error;
pub mod multitime;
pub mod nonlocal;
pub mod oracle;
pub mod positivity;
pub mod quad;
pub mod special;
pub mod spectral;
pub mod tcl2;

pub use error::{Error, Result};
