pub mod channel;
pub mod chsa;
pub mod fusion;
pub mod ild;
pub mod linalg;
pub mod model;
pub mod scenario;
pub mod sskd;
pub mod telemetry;
pub mod vocab;
pub mod wire;
