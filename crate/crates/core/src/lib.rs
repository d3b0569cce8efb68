pub mod acquisition;
pub mod alloop;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod interface;
pub mod surrogate;
pub mod synthetic;
