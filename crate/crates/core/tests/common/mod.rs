#![allow(dead_code)]

pub mod attention;
pub mod gradient;
pub mod graphs;
pub mod hygiene;
pub mod oracle;
