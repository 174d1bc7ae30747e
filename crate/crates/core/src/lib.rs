//! Optical wireless cell formation, association and power allocation.

pub mod allocator;
pub mod association;
pub mod container;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod lab;
pub mod mobility;
pub mod neural;
pub mod optics;
pub mod rng;
pub mod topology;

pub use association::{associate_users, AssociationMap, AssociationParams};
pub use error::{Error, Result};
pub use lab::Lab;
pub use optics::{BeamModel, ChannelState, NoiseModel, ReceiverModel};
pub use topology::{Cell, CellPartition, PartitionScheme, Point, Room, Topology};
