pub mod corrbin;
pub mod decisions;
pub mod error;
pub mod experiments;
pub mod math;
pub mod posterior;
pub mod trial;
