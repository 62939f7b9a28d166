#![no_std]

extern crate alloc;

pub mod cpf;
pub mod error;
pub mod exec;
pub mod measure;
pub mod models;
pub mod qmat;
pub mod stochastic;

pub use error::{Error, Result};
