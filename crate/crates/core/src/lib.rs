pub mod analytics;
pub mod clusters;
pub mod corpus;
pub mod gateway;
pub mod par;
pub mod stance;
pub mod themes;
pub mod topics;
pub mod vecmath;
