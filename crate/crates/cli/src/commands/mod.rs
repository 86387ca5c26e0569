pub mod fit;
pub mod report;
pub mod score;
pub mod select;
pub mod serve;
pub mod synth;
