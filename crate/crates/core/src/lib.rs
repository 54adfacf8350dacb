pub mod corpus;
pub mod numerics;
pub mod taxonomy;
pub mod model;
pub mod trainer;
pub mod eval;
pub mod synthetic;
