pub mod analysis;
pub mod cli;
pub mod dynbc_heat;
pub mod elliptic;
pub mod error;
pub mod fields;
pub mod linalg;
pub mod navier_stokes;
pub mod output;
pub mod quadrature;
pub mod radial_grid;
pub mod stokes;
