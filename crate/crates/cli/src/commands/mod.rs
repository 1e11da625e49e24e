pub mod evaluate;
pub mod export;
pub mod refine;
pub mod train;
