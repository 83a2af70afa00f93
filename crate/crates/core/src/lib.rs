pub mod field;
pub mod geometry;
pub mod grid;
pub mod numeric;
pub mod density;
pub mod compacton;
pub mod radial;
pub mod functional;
pub mod optimize;
pub mod problems;
pub mod splitting;
pub mod symmetry;
pub mod cli;
