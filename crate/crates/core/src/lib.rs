pub mod error;
pub mod linalg;
pub mod panel;

pub use error::{Error, Result};
pub mod tsls;
pub mod tsmodel;
pub mod qp;
pub mod weights;
pub mod aggregate;
pub mod inference;
pub mod exposures;
pub mod sim;
pub mod cli;
