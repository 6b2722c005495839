pub mod examples;
pub mod render;
pub mod run;
pub mod scenario;
