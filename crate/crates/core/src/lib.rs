pub mod control;
pub mod detector;
pub mod estimator;
pub mod numerics;
pub mod plant;
pub mod simkit;
pub mod supervisor;
pub mod topology;
