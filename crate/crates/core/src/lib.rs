//! Volunteer-style distributed computing over a task queue.
//!
//! Workers pull tasks from an at-least-once [`broker`], read and write
//! model state in a versioned [`store`], and run whatever [`worker`]
//! handlers they were given. The [`trainer`] module uses that to train a
//! character-level LSTM ([`nn`]) with synchronous data-parallel SGD: each
//! step is K map tasks computing minibatch gradients and one reduce task
//! that applies them. Because the reduce sums in a fixed order, any number
//! of workers, joining or dying at any time, produces exactly the model a
//! single process would.
//!
//! [`harness`] runs whole fleets in-process for experiments, and [`wire`]
//! serves the broker and store over TCP or WebSocket for real ones.

pub mod broker;
pub mod client;
pub mod clock;
pub mod error;
pub mod harness;
pub mod job;
pub mod linear_softmax;
pub mod nn;
pub mod store;
pub mod trainer;
pub mod wire;
pub mod worker;
