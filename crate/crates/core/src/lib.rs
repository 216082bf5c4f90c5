pub mod auth;
pub mod message;
pub mod permission;
pub mod permitter;
pub mod resource;
pub mod setting;
pub mod network;
pub mod processor;
pub mod scheduler;
pub mod trace;
pub mod enumerate;
pub mod protocols;
pub mod adversary;
pub mod compliance;
pub mod harness;
