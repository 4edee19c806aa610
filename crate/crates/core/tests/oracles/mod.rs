//! Independent reference checks shared by the integration tests and the
//! acceptance run.

#![allow(dead_code)]

pub mod derivatives;
pub mod detector;
pub mod linear;
pub mod roundtrip;
