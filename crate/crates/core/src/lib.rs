pub mod dot;
pub mod graph;
pub mod model;
pub mod notation;
pub mod oracle;
pub mod reasoner;
pub mod recognizer;
pub mod store;
