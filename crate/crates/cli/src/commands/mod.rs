pub mod compare;
pub mod distill;
pub mod evaluate;
pub mod generate;
pub mod train;
