//! Checks shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod fixtures;
pub mod fsm;
pub mod ladder;
pub mod oracle;
pub mod privilege;
