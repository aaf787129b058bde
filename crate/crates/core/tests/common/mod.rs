pub mod fixtures;
pub mod moments;
