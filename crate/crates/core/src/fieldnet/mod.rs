//! Sensor nodes and the framed wireless link to the base station.

mod channel;
mod frame;
mod node;

pub use channel::{
    bpsk_bit_error, channel_transmit, q_function, receive, Channel, ChannelConfigError, ChannelParams,
    ChannelStats, TransportProfile,
};
pub use frame::{crc16_ccitt_false, Flags, Frame, FrameDump, FrameError, FRAME_LEN, SYNC};
pub use node::{NodeError, NodeState, ScheduledFault, SensorNode, TestOutcome, TestStatus, Unit};
