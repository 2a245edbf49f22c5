#![allow(dead_code)]

pub mod broker_oracle;
